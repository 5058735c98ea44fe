"""
Runs one training config for a list of seeds and aggregates the reports.

Each seed gets its own run directory (<label>-seed-<n>); the aggregate table
holds the mean and standard deviation of best, last and diff per attack.

Usage:
    # Three seeds of the desk preset
    python run_for_seeds.py --config desk-mnist-linf --seeds 0 1 2

    # Seeds from a file, one per line ('#' starts a comment)
    python run_for_seeds.py --config desk-mnist-linf --seeds-file seeds.txt --set mlcat.strategy=LS
"""
import os
import sys
import argparse
from dataclasses import replace

from core.analysis import aggregate_reports
from core.config import add_config_arguments, resolve_config, validate
from core.errors import ConfigError, guarded_run
from core.naming import get_filename_slug
from core.reporting import df_to_html, render_html, write_csv, write_html
from experiments.train import run_experiment


def read_seeds_file(path):
    try:
        with open(path, 'r') as f:
            lines = [line.strip() for line in f if line.strip() and not line.strip().startswith('#')]
    except FileNotFoundError as e:
        raise ConfigError('seeds_file', f"'{path}' was not found") from e
    try:
        return [int(line) for line in lines]
    except ValueError as e:
        raise ConfigError('seeds_file', f"'{path}' must hold one integer seed per line") from e


def run_for_seeds(config, seeds):
    """Returns (aggregate DataFrame, list of RunResult)."""
    if not seeds:
        raise ConfigError('seeds', "no seeds provided")
    base_dir = config.run_dir
    print(f"\nFound {len(seeds)} seeds to run for '{config.label}'.")
    results = []
    for seed in seeds:
        label = f"{config.label}-seed-{seed}"
        print(f"\n{'=' * 20} Running seed {seed} {'=' * 20}")
        run_config = validate(replace(config, seed=seed, label=label, output_dir=os.path.join(base_dir, label)))
        results.append(run_experiment(run_config))
        print(f"\n----- Completed seed {seed} -----")

    aggregate = aggregate_reports([r.report for r in results])
    slug = get_filename_slug(config.label)
    csv_path = write_csv(aggregate, os.path.join(base_dir, f"seeds-{slug}.csv"))
    html = render_html(f"Seed Aggregate: {config.label}",
                       [{'title': 'Mean and standard deviation over seeds', 'table': df_to_html(aggregate, 'table-seeds'),
                         'note': f"Seeds: {', '.join(str(s) for s in seeds)}. Accuracies in percent."}])
    write_html(html, os.path.join(base_dir, f"seeds-{slug}.html"))
    print(f"\nAggregate saved to: {csv_path}")
    return aggregate, results


def main():
    parser = argparse.ArgumentParser(
        description='Run one training config for several seeds and aggregate best/last/diff.',
        formatter_class=argparse.RawDescriptionHelpFormatter
    )
    add_config_arguments(parser)
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument('--seeds', nargs='+', type=int, help='Seeds to run.')
    group.add_argument('--seeds-file', help='Path to a text file containing one seed per line.')
    args = parser.parse_args()

    def run(args):
        seeds = read_seeds_file(args.seeds_file) if args.seeds_file else args.seeds
        if args.seeds_file:
            print(f"Loaded {len(seeds)} seeds from {args.seeds_file}.")
        return run_for_seeds(resolve_config(args), seeds)

    sys.exit(guarded_run(run, args))


if __name__ == '__main__':
    main()
