"""
Natural and PGD-K robust accuracy of a stored checkpoint on the test split.

Usage:
    python experiments/evaluate.py output/desk/checkpoints/last.json --config desk-mnist-linf
    python experiments/evaluate.py model.json --config desk-mnist-linf --epsilon 4/255 --steps 50
"""
import os
import sys
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import argparse
from dataclasses import replace

from core.analysis import evaluate
from core.config import ExperimentConfig, add_config_arguments, resolve_config
from core.data_io import load_dataset
from core.errors import guarded_run
from core.naming import get_filename_slug
from core.reporting import format_epsilon, write_json
from experiments.histogram import load_compatible_checkpoint
from experiments.sweep_epsilon import parse_epsilon


def run_evaluation(checkpoint, config: ExperimentConfig, epsilon=None, steps=None, output_path=None):
    """Returns {'natural': %, 'robust': %, ...} and writes it as JSON."""
    _, test = load_dataset(config.dataset, config.seed)
    model, metadata = load_compatible_checkpoint(checkpoint, test)
    tm = config.eval_threat
    if epsilon is not None:
        tm = tm.with_epsilon(epsilon)
    if steps is not None:
        tm = replace(tm, steps=int(steps))
    tm.validate('eval_threat')
    attack = f"PGD-{tm.steps}"
    print(f"Evaluating {checkpoint} on {len(test)} test examples ({attack}, {tm.norm.value}, "
          f"eps {format_epsilon(tm.epsilon)})...")

    natural, robust = evaluate(model, test, tm, seed=config.seed, epoch=int(metadata.get('epoch', 0)),
                               batch_size=config.eval_batch_size)
    result = {
        'checkpoint': checkpoint,
        'attack': attack,
        'norm': tm.norm.value,
        'epsilon': tm.epsilon,
        'natural': round(100.0 * natural, 6),
        'robust': round(100.0 * robust, 6),
        'random_start': tm.random_start,
        'restarts': 1,
    }
    print(f"  - Natural accuracy: {result['natural']:.2f}%")
    print(f"  - {attack} accuracy: {result['robust']:.2f}%")
    if output_path is None:
        output_path = os.path.join(config.run_dir, f"evaluation-{get_filename_slug(config.label)}.json")
    write_json(result, output_path)
    return result


def add_arguments(parser: argparse.ArgumentParser):
    parser.add_argument('checkpoint', help='Path to a JSON checkpoint written by a training run.')
    add_config_arguments(parser)
    parser.add_argument('--epsilon', help='Attack budget (default: the config evaluation budget), e.g. 8/255.')
    parser.add_argument('--steps', type=int, help='PGD steps (default: the config evaluation steps).')
    parser.add_argument('--output', help='JSON path (default: in the run directory).')
    return parser


def run_from_args(args):
    config = resolve_config(args)
    epsilon = parse_epsilon(args.epsilon) if args.epsilon else None
    return run_evaluation(args.checkpoint, config, epsilon, args.steps, args.output)


def main():
    parser = argparse.ArgumentParser(description='Evaluate a checkpoint under natural and PGD-K attacks.')
    add_arguments(parser)
    args = parser.parse_args()
    sys.exit(guarded_run(run_from_args, args))


if __name__ == '__main__':
    main()
