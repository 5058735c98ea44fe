"""
Desk-scale trend checks for robust overfitting and its removal.

Every check trains full runs, so expect tens of CPU minutes on the MNIST preset.
Gaps are |last - best| of the evaluation attack, averaged over seeds.

    epsilon   gap at eps=8/255 exceeds the gap at eps=0 by at least 2 points
    mlcat     MLCAT_WP and MLCAT_LS gaps are at most half the AT gap
    ablation  drop_small halves the AT gap, drop_large stays within 30% of it
    determinism  two runs with one seed give byte-identical report CSVs

Usage:
    python utilities/reproduce_trends.py --config desk-mnist-linf --seeds 0 1 2
    python utilities/reproduce_trends.py --config desk-synthetic-smoke --checks determinism
"""
import os
import sys
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import argparse
import math
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from core.config import add_config_arguments, resolve_config, validate
from core.errors import guarded_run
from core.naming import epsilon_label
from core.reporting import write_csv, write_json
from core.trainer import AblationMode, AblationSpec, Strategy
from experiments.train import run_experiment

EPSILONS = (0.0, 2 / 255, 8 / 255)
CHECKS = ('epsilon', 'mlcat', 'ablation', 'determinism')


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)


def _run(config, label, seed, **changes):
    run_config = replace(config, seed=seed, label=f"{label}-seed-{seed}",
                         output_dir=os.path.join(config.run_dir, label, f"seed-{seed}"), **changes)
    return run_experiment(validate(run_config))


def _mean_gap(config, label, seeds, **changes):
    return float(np.mean([abs(_run(config, label, seed, **changes).report.diff) for seed in seeds]))


def _at(config, epsilon):
    return dict(algorithm='at', train_threat=config.train_threat.with_epsilon(epsilon),
                eval_threat=config.eval_threat.with_epsilon(epsilon))


def check_epsilon_trend(config, seeds, margin=2.0):
    gaps = {}
    for epsilon in EPSILONS:
        gaps[epsilon_label(epsilon)] = _mean_gap(config, f"eps-{epsilon_label(epsilon)}", seeds, **_at(config, epsilon))
    high, low = gaps[epsilon_label(EPSILONS[-1])], gaps[epsilon_label(EPSILONS[0])]
    return CheckResult('epsilon', high - low >= margin, {'gaps': gaps, 'required_margin': margin})


def check_mlcat_effect(config, seeds, factor=2.0):
    epsilon = EPSILONS[-1]
    at_gap = _mean_gap(config, 'at', seeds, **_at(config, epsilon))
    gaps = {'AT': at_gap}
    for strategy in (Strategy.WP, Strategy.LS):
        changes = _at(config, epsilon)
        changes.update(algorithm='mlcat', mlcat=replace(config.mlcat, strategy=strategy))
        gaps[f"MLCAT_{strategy.value}"] = _mean_gap(config, f"mlcat-{strategy.value}", seeds, **changes)
    passed = all(gap * factor <= at_gap for name, gap in gaps.items() if name != 'AT')
    return CheckResult('mlcat', passed, {'gaps': gaps, 'required_factor': factor})


def check_ablation(config, seeds, factor=2.0, tolerance=0.3):
    epsilon = EPSILONS[-1]
    l_min = config.mlcat.l_min
    at_gap = _mean_gap(config, 'at', seeds, **_at(config, epsilon))
    small = dict(_at(config, epsilon), ablation=AblationSpec(AblationMode.DROP_SMALL, 0.0, l_min))
    large = dict(_at(config, epsilon), ablation=AblationSpec(AblationMode.DROP_LARGE, l_min, math.inf))
    small_gap = _mean_gap(config, 'drop-small', seeds, **small)
    large_gap = _mean_gap(config, 'drop-large', seeds, **large)
    passed = small_gap * factor <= at_gap and abs(large_gap - at_gap) <= tolerance * at_gap
    return CheckResult('ablation', passed, {'gaps': {'AT': at_gap, 'drop_small': small_gap, 'drop_large': large_gap},
                                            'required_factor': factor, 'tolerance': tolerance})


def check_determinism(config, seed):
    contents = []
    for repeat in ('a', 'b'):
        result = _run(config, f"determinism-{repeat}", seed, **_at(config, EPSILONS[-1]))
        with open(result.paths['report'], 'rb') as f:
            contents.append(f.read())
    return CheckResult('determinism', contents[0] == contents[1], {'seed': seed, 'bytes': len(contents[0])})


def reproduce_trends(config, seeds, checks=CHECKS):
    """Runs the selected checks and writes trend-checks.csv/json into the config's run directory."""
    validate(config)
    print(f"Running trend checks {', '.join(checks)} for '{config.label}' over seeds {list(seeds)}...")
    runners = {
        'epsilon': lambda: check_epsilon_trend(config, seeds),
        'mlcat': lambda: check_mlcat_effect(config, seeds),
        'ablation': lambda: check_ablation(config, seeds),
        'determinism': lambda: check_determinism(config, seeds[0]),
    }
    results = []
    for name in checks:
        print(f"\n{'=' * 20} Check: {name} {'=' * 20}")
        result = runners[name]()
        print(f"  - {name}: {'PASS' if result.passed else 'FAIL'} {result.detail}")
        results.append(result)

    frame = pd.DataFrame([{'check': r.name, 'passed': r.passed} for r in results])
    write_csv(frame, os.path.join(config.run_dir, 'trend-checks.csv'))
    write_json({r.name: {'passed': r.passed, **r.detail} for r in results},
               os.path.join(config.run_dir, 'trend-checks.json'))
    return results


def main():
    parser = argparse.ArgumentParser(description='Desk-scale robust-overfitting trend checks.')
    add_config_arguments(parser)
    parser.add_argument('--seeds', nargs='+', type=int, default=[0, 1, 2])
    parser.add_argument('--checks', nargs='+', choices=CHECKS, default=list(CHECKS))
    args = parser.parse_args()
    sys.exit(guarded_run(lambda a: reproduce_trends(resolve_config(a), a.seeds, a.checks), args))


if __name__ == '__main__':
    main()
