"""
Loss-range histogram for a stored checkpoint.
Fresh adversarial examples are generated for the whole training split with the
config's training attack, then per-example CE is binned.

Usage:
    python experiments/histogram.py output/desk/checkpoints/best.json --config desk-mnist-linf
    python experiments/histogram.py model.json --config desk-synthetic-smoke --edges 0 1.5 Infinity
"""
import os
import sys
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import argparse

from core.analysis import loss_histogram
from core.config import ExperimentConfig, add_config_arguments, resolve_config
from core.data_io import load_dataset
from core.errors import ConfigError, guarded_run
from core.naming import get_filename_slug
from core.nn import load_checkpoint
from core.reporting import df_to_html, format_epsilon, render_html, write_csv, write_html
from experiments.sweep_epsilon import parse_epsilon


def load_compatible_checkpoint(path, dataset):
    """Loads a checkpoint and checks it fits the dataset's feature and class counts."""
    model, metadata = load_checkpoint(path)
    if model.in_features != dataset.features or model.class_count != dataset.class_count:
        raise ConfigError('checkpoint', f"{path} maps {model.in_features} features to {model.class_count} classes, "
                                        f"the dataset has {dataset.features} and {dataset.class_count}")
    return model, metadata


def run_histogram(checkpoint, config: ExperimentConfig, edges=None, epsilon=None, split='train', output_path=None):
    """Writes one histogram CSV (epoch, edge_lo, edge_hi, count) plus its HTML page. Returns the LossHistogram."""
    train, test = load_dataset(config.dataset, config.seed)
    ds = train if split == 'train' else test
    model, metadata = load_compatible_checkpoint(checkpoint, ds)
    tm = config.train_threat if epsilon is None else config.train_threat.with_epsilon(epsilon)
    edges = tuple(edges) if edges else config.histogram.edges
    epoch = int(metadata.get('epoch', 0))
    print(f"Running loss histogram for {checkpoint} on {len(ds)} {split} examples "
          f"(eps {format_epsilon(tm.epsilon)}, {tm.steps} steps)...")

    histogram = loss_histogram(model, ds, tm, edges, epoch=epoch, seed=config.seed,
                               batch_size=config.eval_batch_size)
    frame = histogram.to_frame()
    if output_path is None:
        output_path = os.path.join(config.run_dir, f"histogram-{get_filename_slug(config.label)}-epoch-{epoch}.csv")
    write_csv(frame, output_path)
    html = render_html(f"Loss Ranges: {os.path.basename(checkpoint)}",
                       [{'title': 'Examples per loss range', 'table': df_to_html(frame, 'table-histogram'),
                         'note': 'Fresh adversarial examples, half-open bins [edge_lo, edge_hi).'}])
    write_html(html, os.path.splitext(output_path)[0] + '.html')
    for lo, hi, count in zip(histogram.bin_edges[:-1], histogram.bin_edges[1:], histogram.counts):
        print(f"  - [{lo:g}, {hi:g}): {count}")
    return histogram


def add_arguments(parser: argparse.ArgumentParser):
    parser.add_argument('checkpoint', help='Path to a JSON checkpoint written by a training run.')
    add_config_arguments(parser)
    parser.add_argument('--edges', nargs='+', type=float, help='Bin edges, from 0 to Infinity.')
    parser.add_argument('--epsilon', help='Attack budget (default: the config training budget), e.g. 8/255.')
    parser.add_argument('--split', choices=['train', 'test'], default='train')
    parser.add_argument('--output', help='CSV path (default: in the run directory).')
    return parser


def run_from_args(args):
    config = resolve_config(args)
    epsilon = parse_epsilon(args.epsilon) if args.epsilon else None
    return run_histogram(args.checkpoint, config, args.edges, epsilon, args.split, args.output)


def main():
    parser = argparse.ArgumentParser(description='Histogram of adversarial training losses for a checkpoint.')
    add_arguments(parser)
    args = parser.parse_args()
    sys.exit(guarded_run(run_from_args, args))


if __name__ == '__main__':
    main()
