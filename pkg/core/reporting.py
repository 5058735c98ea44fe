"""
Artefact writers for experiment runs.
CSV tables go through pandas, every table also gets an HTML companion page
rendered from a Jinja2 template string, summaries and metadata are JSON.
Column orders are fixed here and nowhere else.
"""
import json
import math
import os

import numpy as np
import pandas as pd
from jinja2 import Environment

HISTOGRAM_COLUMNS = ['epoch', 'edge_lo', 'edge_hi', 'count']
SWEEP_COLUMNS = ['label', 'parameter', 'value', 'attack', 'best_epoch', 'best', 'last', 'diff',
                 'natural_best', 'natural_last', 'natural_diff']

HTML_TEMPLATE = """
<!DOCTYPE html>
<html lang="en">
<head>
    <meta charset="UTF-8">
    <meta name="viewport" content="width=device-width, initial-scale=1.0">
    <title>{{ report_title }}</title>
    <link href="https://cdn.jsdelivr.net/npm/bootstrap@5.3.3/dist/css/bootstrap.min.css" rel="stylesheet">
    <style>
        body { padding-top: 56px; }
        h2 { border-bottom: 2px solid #dee2e6; padding-bottom: .5rem; margin-top: 2rem; }
        .table thead th { background-color: #434343; color: #ffffff; text-align: left; }
        .table-responsive { max-height: 600px; overflow-y: auto; }
        footer { margin-top: 3rem; text-align: center; color: #6c757d; }
    </style>
</head>
<body>
    <header class="navbar navbar-expand-lg navbar-light bg-light border-bottom mb-4 fixed-top">
        <div class="container-fluid">
            <h1 class="h3 mb-0">{{ report_title }}</h1>
        </div>
    </header>
    <main class="container-fluid py-4">
        {% if subtitle %}<p class="text-muted">{{ subtitle }}</p>{% endif %}
        {% for section in sections %}
        <h2>{{ section.title }}</h2>
        {% if section.note %}<p class="text-muted">{{ section.note }}</p>{% endif %}
        <div class="table-responsive">{{ section.table|safe }}</div>
        {% endfor %}
        {% if metadata %}
        <h2>Run notes</h2>
        <ul class="list-group mb-4">
            {% for key, value in metadata.items() %}
            <li class="list-group-item"><strong>{{ key }}</strong>: {{ value }}</li>
            {% endfor %}
        </ul>
        {% endif %}
    </main>
    <footer class="footer mt-auto py-3 bg-light">
        <div class="container text-center">
            <span class="text-muted">mlcat-lab</span>
        </div>
    </footer>
</body>
</html>
"""


def _ensure_dir(path):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)


def _json_default(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.bool_):
        return bool(value)
    raise TypeError(f"Cannot serialise {type(value).__name__}")


def df_to_html(df, table_id=None, float_format="%.4f"):
    if df.empty:
        return "<p>No data available for this section.</p>"
    return df.to_html(classes="table table-striped table-hover", index=False, border=0,
                      table_id=table_id, float_format=float_format)


def render_html(report_title, sections, subtitle=None, metadata=None):
    """`sections` is a list of dicts with title, table (HTML) and an optional note."""
    template = Environment().from_string(HTML_TEMPLATE)
    return template.render(report_title=report_title, sections=sections, subtitle=subtitle, metadata=metadata)


def write_html(html, path):
    _ensure_dir(path)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(html)
    print(f"HTML saved to: {path}")
    return path


def write_csv(df, path):
    _ensure_dir(path)
    df.to_csv(path, index=False, encoding='utf-8')
    print(f"CSV saved to: {path}")
    return path


def write_json(record, path, announce=True):
    _ensure_dir(path)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(record, f, indent=2, default=_json_default)
        f.write('\n')
    if announce:
        print(f"JSON saved to: {path}")
    return path


def append_jsonl(record, path):
    _ensure_dir(path)
    with open(path, 'a', encoding='utf-8') as f:
        f.write(json.dumps(record, default=_json_default) + '\n')
    return path


def report_frame(points, attack):
    """Columns: epoch, natural, <attack> (accuracies in percent)."""
    frame = pd.DataFrame(list(points), columns=['epoch', 'natural', attack])
    frame['epoch'] = frame['epoch'].astype(int)
    return frame


def summary_record(reports, **extra):
    """JSON summary: one best/last/diff block per attack plus run-level fields."""
    record = dict(extra)
    record['attacks'] = {r.attack: r.to_dict() for r in reports}
    return record


def histogram_frame(histograms):
    frames = [h.to_frame() for h in histograms]
    if not frames:
        return pd.DataFrame(columns=HISTOGRAM_COLUMNS)
    return pd.concat(frames, ignore_index=True)[HISTOGRAM_COLUMNS]


def sweep_frame(rows):
    frame = pd.DataFrame(rows)
    for column in SWEEP_COLUMNS:
        if column not in frame.columns:
            frame[column] = None
    return frame[SWEEP_COLUMNS]


def format_epsilon(epsilon):
    steps = epsilon * 255
    if math.isclose(steps, round(steps), abs_tol=1e-9):
        return f"{int(round(steps))}/255"
    return f"{epsilon:g}"


def summary_frame(reports):
    """One row per attack: best_epoch, best, last, diff and the natural-accuracy counterparts."""
    return pd.DataFrame([r.to_dict() for r in reports])
