"""
Trains one model end to end and writes every artefact of the run.

For each epoch: adversarial training pass, evaluation on the test split under
the evaluation attack, optional loss histogram, checkpoints. At the end:
best/last/diff report, loss traces, run metadata and an HTML summary.

Usage:
    python experiments/train.py --config desk-synthetic-smoke
    python experiments/train.py --config desk-mnist-linf --set mlcat.strategy=LS --label desk-ls
"""
import os
import sys
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import argparse
from typing import NamedTuple

from core import __version__
from core.analysis import LossTraceStore, evaluate, loss_histogram, overfit_report
from core.config import ExperimentConfig, add_config_arguments, resolve_config, save_config, validate
from core.data_io import load_dataset
from core.errors import guarded_run
from core.naming import get_filename_slug
from core.nn import init_mlp, save_checkpoint
from core.reporting import (append_jsonl, df_to_html, format_epsilon, histogram_frame, render_html, report_frame,
                            summary_frame, summary_record, write_csv, write_html, write_json)
from core.seeding import substream
from core.trainer import train_epoch

RESOLVED_CONFIG = 'resolved-config.json'
TRAINING_LOG = 'training-log.jsonl'
RUN_METADATA = 'run-metadata.json'


class RunResult(NamedTuple):
    run_dir: str
    report: object
    points: list
    model: object
    stats: list
    paths: dict


def attack_name(config: ExperimentConfig):
    return f"PGD-{config.eval_threat.steps}"


def run_metadata(config: ExperimentConfig):
    return {
        'version': __version__,
        'algorithm': config.algorithm,
        'strategy': config.mlcat.strategy.value if config.algorithm == 'mlcat' else None,
        'evaluation_attack': f"{attack_name(config)} {config.eval_threat.norm.value} "
                             f"eps={format_epsilon(config.eval_threat.epsilon)}, single random start, no restarts",
        'histogram_losses': 'fresh adversarial examples per snapshot (training attack settings)',
        'augmentation': 'none',
        'indicator_boundary': 'l_i == l_min passes through unadjusted (strict l_i < l_min gate)',
        'loss_scaling_cap': config.mlcat.scaling_cap,
        'weight_perturbation': f"gamma={config.mlcat.gamma}, scope={config.mlcat.wp_scope.value}, "
                               f"weights only, gradients at w+v applied to w",
    }


def _epoch_line(stats, epochs, natural, robust, attack):
    line = (f"  - Epoch {stats.epoch + 1}/{epochs}: lr {stats.lr:.4g}, adv loss {stats.mean_adv_loss:.4f}, "
            f"natural {natural:.2f}%, {attack} {robust:.2f}%")
    if stats.adjusted_count:
        line += f", adjusted {stats.adjusted_count}"
    if stats.dropped_count:
        line += f", dropped {stats.dropped_count}"
    return line


def run_experiment(config: ExperimentConfig) -> RunResult:
    """Runs the full training loop for a validated config and returns the run's results."""
    validate(config)
    run_dir = config.run_dir
    os.makedirs(run_dir, exist_ok=True)
    slug = get_filename_slug(config.label)
    attack = attack_name(config)
    oc = config.optim
    print(f"Running {config.algorithm.upper()} training for '{config.label}' ({oc.epochs} epochs, seed {config.seed})...")

    paths = {'config': save_config(config, os.path.join(run_dir, RESOLVED_CONFIG))}
    print(f"JSON saved to: {paths['config']}")

    train, test = load_dataset(config.dataset, config.seed)
    print(f"  - Loaded {len(train)} training and {len(test)} test examples ({train.features} features, "
          f"{train.class_count} classes).")
    sizes = config.model.sizes(train.features, train.class_count)
    model = init_mlp(sizes, substream(config.seed, 'init'))
    print(f"  - Model layers: {'-'.join(str(s) for s in sizes)}")

    log_path = os.path.join(run_dir, TRAINING_LOG)
    if os.path.exists(log_path):
        os.remove(log_path)
    checkpoint_dir = os.path.join(run_dir, 'checkpoints')

    plan = config.training_plan()
    store = LossTraceStore()
    state = None
    points, histograms, all_stats = [], [], []
    best_robust = None
    for epoch in range(oc.epochs):
        model, state, stats = train_epoch(model, state, train, plan, epoch, store)
        natural, robust = evaluate(model, test, config.eval_threat, seed=config.seed, epoch=epoch,
                                   batch_size=config.eval_batch_size)
        natural, robust = round(100.0 * natural, 6), round(100.0 * robust, 6)
        points.append((epoch, natural, robust))
        all_stats.append(stats)

        record = stats.to_dict()
        record.update(natural_acc=natural, robust_acc=robust)
        append_jsonl(record, log_path)
        print(_epoch_line(stats, oc.epochs, natural, robust, attack))
        for event in stats.events:
            if event['kind'] != 'ablation_drop':
                print(f"  - Event {event['kind']} (epoch {event['epoch']}, batch {event['batch']}): {event['detail']}")

        meta = {'label': config.label, 'epoch': epoch, 'natural': natural, 'robust': robust, 'attack': attack}
        if best_robust is None or robust > best_robust:
            best_robust = robust
            paths['best_checkpoint'] = save_checkpoint(model, os.path.join(checkpoint_dir, 'best.json'), meta)
        if config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
            save_checkpoint(model, os.path.join(checkpoint_dir, f"epoch-{epoch + 1:03d}.json"), meta)
        if config.histogram.due(epoch, oc.epochs):
            histograms.append(loss_histogram(model, train, config.train_threat, config.histogram.edges,
                                             epoch=epoch, seed=config.seed, batch_size=config.eval_batch_size))
    paths['last_checkpoint'] = save_checkpoint(model, os.path.join(checkpoint_dir, 'last.json'),
                                               {'label': config.label, 'epoch': oc.epochs - 1, 'attack': attack})
    print(f"  - Checkpoints saved to: {checkpoint_dir}")

    report = overfit_report(points, attack)
    report_df = report_frame(points, attack)
    paths['report'] = write_csv(report_df, os.path.join(run_dir, f"report-{slug}.csv"))
    paths['summary'] = write_json(
        summary_record([report], label=config.label, algorithm=config.algorithm, seed=config.seed,
                       epochs=oc.epochs, adjusted_total=sum(s.adjusted_count for s in all_stats),
                       skipped_batches=sum(s.skipped_batches for s in all_stats)),
        os.path.join(run_dir, f"summary-{slug}.json"))
    sections = [
        {'title': 'Best / Last / Diff', 'table': df_to_html(summary_frame([report]), 'table-summary'),
         'note': 'Accuracies in percent on the test split. Diff = last - best.'},
        {'title': 'Accuracy per Epoch', 'table': df_to_html(report_df, 'table-epochs')},
    ]
    if histograms:
        hist_df = histogram_frame(histograms)
        paths['histograms'] = write_csv(hist_df, os.path.join(run_dir, f"histograms-{slug}.csv"))
        sections.append({'title': 'Training Loss Ranges', 'table': df_to_html(hist_df, 'table-histograms'),
                         'note': 'Per-example adversarial CE on the training split, half-open bins.'})
    paths['trace'] = write_csv(store.to_frame(), os.path.join(run_dir, f"loss-trace-{slug}.csv"))
    metadata = run_metadata(config)
    paths['metadata'] = write_json(metadata, os.path.join(run_dir, RUN_METADATA))
    html = render_html(f"Robust Overfitting Report: {config.label}", sections,
                       subtitle=f"{config.algorithm.upper()} on {config.dataset.source} data, "
                                f"train eps {format_epsilon(config.train_threat.epsilon)}, {attack} evaluation",
                       metadata=metadata)
    paths['html'] = write_html(html, os.path.join(run_dir, f"report-{slug}.html"))
    print(f"  - Best {attack}: {report.best:.2f}% at epoch {report.best_epoch + 1}, last {report.last:.2f}%, "
          f"diff {report.diff:+.2f}")
    return RunResult(run_dir, report, points, model, all_stats, paths)


def add_arguments(parser: argparse.ArgumentParser):
    return add_config_arguments(parser)


def run_from_args(args):
    return run_experiment(resolve_config(args))


def main():
    parser = argparse.ArgumentParser(description='Train one model with AT, TRADES, MLCAT or AWP.')
    add_arguments(parser)
    args = parser.parse_args()
    sys.exit(guarded_run(run_from_args, args))


if __name__ == '__main__':
    main()
