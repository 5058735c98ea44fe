"""
Data-ablation adversarial training: trains with examples from a loss range
removed and annotates the report with per-epoch drop statistics.

Modes:
    drop_small              losses in [loss_lo, loss_hi) removed from epoch 0
    drop_large              losses in [loss_lo, loss_hi) removed from the first milestone
    drop_small_original     small-loss examples that were already small at the first milestone
    drop_small_transformed  small-loss examples that were not small at the first milestone

Usage:
    python experiments/ablate.py --config desk-mnist-linf --mode drop_small --loss-hi 1.5
    python experiments/ablate.py --config desk-mnist-linf --mode drop_large --loss-lo 1.5 --loss-hi Infinity
"""
import os
import sys
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import argparse
from dataclasses import replace

import pandas as pd

from core.config import ExperimentConfig, add_config_arguments, resolve_config, validate
from core.errors import guarded_run
from core.naming import get_filename_slug
from core.reporting import df_to_html, render_html, write_csv, write_html
from core.trainer import AblationMode, AblationSpec
from experiments.train import run_experiment


def ablation_stats_frame(stats):
    """Columns: epoch, kept, dropped, total, skipped_batches."""
    return pd.DataFrame([{
        'epoch': s.epoch,
        'kept': s.kept_count,
        'dropped': s.dropped_count,
        'total': s.kept_count + s.dropped_count,
        'skipped_batches': s.skipped_batches,
    } for s in stats])


def run_ablation(config: ExperimentConfig, spec: AblationSpec | None = None):
    """Runs training with `spec` (or the config's own ablation block) and writes ablation-stats CSV/HTML."""
    if spec is not None:
        config = replace(config, ablation=spec)
    validate(config)
    spec = config.ablation
    start = spec.resolved_start(config.optim.milestones)
    print(f"Running data ablation '{spec.mode.value}' for '{config.label}': "
          f"losses in [{spec.loss_lo}, {spec.loss_hi}) from epoch {start}...")
    result = run_experiment(config)

    frame = ablation_stats_frame(result.stats)
    slug = get_filename_slug(config.label)
    csv_path = write_csv(frame, os.path.join(result.run_dir, f"ablation-stats-{slug}.csv"))
    html = render_html(f"Data Ablation: {config.label}",
                       [{'title': 'Kept and dropped examples per epoch', 'table': df_to_html(frame, 'table-ablation'),
                         'note': f"Mode {spec.mode.value}, loss range [{spec.loss_lo}, {spec.loss_hi}), "
                                 f"active from epoch {start}."}])
    write_html(html, os.path.join(result.run_dir, f"ablation-stats-{slug}.html"))
    result.paths['ablation_stats'] = csv_path
    return result


def add_arguments(parser: argparse.ArgumentParser):
    add_config_arguments(parser)
    parser.add_argument('--mode', choices=[m.value for m in AblationMode], help='Ablation mode (default: from config).')
    parser.add_argument('--loss-lo', type=float, help='Lower edge of the removed loss range.')
    parser.add_argument('--loss-hi', type=float, help='Upper edge of the removed loss range (Infinity allowed).')
    parser.add_argument('--start-epoch', type=int, help='First epoch with removal (default depends on the mode).')
    return parser


def run_from_args(args):
    config = resolve_config(args)
    updates = {name: value for name, value in (('mode', args.mode), ('loss_lo', args.loss_lo),
                                               ('loss_hi', args.loss_hi), ('start_epoch', args.start_epoch))
               if value is not None}
    spec = replace(config.ablation, **updates) if updates else None
    return run_ablation(config, spec)


def main():
    parser = argparse.ArgumentParser(description='Adversarial training with a loss range of the training data removed.')
    add_arguments(parser)
    args = parser.parse_args()
    sys.exit(guarded_run(run_from_args, args))


if __name__ == '__main__':
    main()
