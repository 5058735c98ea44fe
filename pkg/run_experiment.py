"""
Single entry point for the experiment scripts.

Usage:
    python run_experiment.py train --config desk-synthetic-smoke
    python run_experiment.py sweep-epsilon --config desk-mnist-linf --epsilons 0 2/255 8/255
    python run_experiment.py ablate --config desk-mnist-linf --mode drop_small --loss-hi 1.5
    python run_experiment.py histogram output/desk/checkpoints/best.json --config desk-mnist-linf
    python run_experiment.py evaluate output/desk/checkpoints/last.json --config desk-mnist-linf

Exit codes: 0 success, 2 configuration or unreadable input, 3 numeric failure.
"""
import argparse
import sys

from core.errors import guarded_run
from experiments import ablate, evaluate, histogram, sweep_epsilon, train

SUBCOMMANDS = {
    'train': (train, 'Train one model and write its report.'),
    'sweep-epsilon': (sweep_epsilon, 'Repeat training over epsilon, l_min or strategy values.'),
    'ablate': (ablate, 'Train with a loss range of the training data removed.'),
    'histogram': (histogram, 'Loss-range histogram for a checkpoint.'),
    'evaluate': (evaluate, 'Natural and robust accuracy of a checkpoint.'),
}


def build_parser():
    parser = argparse.ArgumentParser(
        description='Minimum-loss-constrained adversarial training experiments.',
        formatter_class=argparse.RawDescriptionHelpFormatter
    )
    subparsers = parser.add_subparsers(dest='command', required=True)
    for name, (module, help_text) in SUBCOMMANDS.items():
        sub = subparsers.add_parser(name, help=help_text, description=help_text)
        module.add_arguments(sub)
        sub.set_defaults(handler=module.run_from_args)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return guarded_run(args.handler, args)


if __name__ == '__main__':
    sys.exit(main())
