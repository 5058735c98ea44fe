"""
Repeats one training config over a list of values and consolidates the reports.

The epsilon sweep trains and evaluates at the same budget for every value.
The l_min and strategy sweeps keep the threat model fixed and vary the MLCAT
configuration instead.

Usage:
    python experiments/sweep_epsilon.py --config desk-mnist-linf --epsilons 0 2/255 8/255
    python experiments/sweep_epsilon.py --config desk-mnist-linf --l-min 0 1.0 1.5 2.0
    python experiments/sweep_epsilon.py --config desk-mnist-linf --strategies LS WP identity
"""
import os
import sys
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import argparse
from dataclasses import replace
from fractions import Fraction

from core.config import ExperimentConfig, add_config_arguments, resolve_config, validate
from core.errors import ConfigError, guarded_run
from core.naming import epsilon_label, get_filename_slug, sweep_run_label
from core.reporting import df_to_html, render_html, sweep_frame, write_csv, write_html
from experiments.train import run_experiment


def parse_epsilon(text):
    """
    Accepts '0.03', '8/255' or '8' style budgets. A bare integer k is always read as k/255
    ('1' is 1/255); write '1.0' for a raw budget of one.
    """
    text = text.strip()
    try:
        value = float(Fraction(text))
    except (ValueError, ZeroDivisionError) as e:
        raise ConfigError('epsilons', f"cannot read '{text}' as a budget") from e
    if text.isdigit():
        value = value / 255
    if value < 0:
        raise ConfigError('epsilons', f"budgets must be >= 0, got {text}")
    return value


def _with_epsilon(config, epsilon):
    return replace(config, train_threat=config.train_threat.with_epsilon(epsilon),
                   eval_threat=config.eval_threat.with_epsilon(epsilon))


def _with_l_min(config, l_min):
    return replace(config, algorithm='mlcat', mlcat=replace(config.mlcat, l_min=float(l_min)))


def _with_strategy(config, strategy):
    return replace(config, algorithm='mlcat', mlcat=replace(config.mlcat, strategy=strategy))


def run_sweep(config: ExperimentConfig, parameter, values, apply, value_label=str):
    """
    Runs one training per value. Each run writes into <run_dir>/<label>-<parameter>-<value>/.
    Returns the summary DataFrame (one row per run).
    """
    validate(config)
    if not values:
        raise ConfigError(parameter, "the sweep needs at least one value")
    sweep_dir = config.run_dir
    print(f"Running {parameter} sweep for '{config.label}' over {len(values)} values...")
    rows = []
    for value in values:
        label = sweep_run_label(config.label, parameter, value_label(value))
        run_config = validate(replace(apply(config, value), label=label,
                                      output_dir=os.path.join(sweep_dir, label)))
        print(f"\n{'=' * 20} {parameter} = {value_label(value)} {'=' * 20}")
        result = run_experiment(run_config)
        row = {'label': label, 'parameter': parameter, 'value': value}
        row.update(result.report.to_dict())
        rows.append(row)

    summary = sweep_frame(rows)
    slug = get_filename_slug(config.label)
    csv_path = write_csv(summary, os.path.join(sweep_dir, f"sweep-{parameter}-{slug}.csv"))
    html = render_html(f"{parameter} sweep: {config.label}",
                       [{'title': 'Best / Last / Diff per run', 'table': df_to_html(summary, 'table-sweep'),
                         'note': 'Accuracies in percent. Diff = last - best.'}])
    write_html(html, os.path.join(sweep_dir, f"sweep-{parameter}-{slug}.html"))
    print(f"\nSweep summary: {csv_path}")
    return summary


def run_epsilon_sweep(config: ExperimentConfig, epsilons):
    """Training and evaluation budgets move together."""
    return run_sweep(config, 'eps', [float(e) for e in epsilons], _with_epsilon, epsilon_label)


def run_l_min_sweep(config: ExperimentConfig, l_min_values):
    return run_sweep(config, 'lmin', [float(v) for v in l_min_values], _with_l_min, lambda v: f"{v:g}")


def run_strategy_sweep(config: ExperimentConfig, strategies):
    return run_sweep(config, 'strategy', list(strategies), _with_strategy)


def add_arguments(parser: argparse.ArgumentParser):
    add_config_arguments(parser)
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument('--epsilons', nargs='+', help="Budgets to sweep, e.g. 0 2/255 8/255.")
    group.add_argument('--l-min', dest='l_min', nargs='+', type=float, help='Minimum loss conditions to sweep.')
    group.add_argument('--strategies', nargs='+', help='Loss-adjustment strategies to compare.')
    return parser


def run_from_args(args):
    config = resolve_config(args)
    if args.epsilons:
        return run_epsilon_sweep(config, [parse_epsilon(e) for e in args.epsilons])
    if args.l_min:
        return run_l_min_sweep(config, args.l_min)
    return run_strategy_sweep(config, args.strategies)


def main():
    parser = argparse.ArgumentParser(description='Sweep epsilon, l_min or the adjustment strategy over one config.')
    add_arguments(parser)
    args = parser.parse_args()
    sys.exit(guarded_run(run_from_args, args))


if __name__ == '__main__':
    main()
