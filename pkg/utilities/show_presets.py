import os
import sys
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from core.config import list_presets, load_config
from core.reporting import format_epsilon


def show_presets():
    """
    Displays an overview of the scripts and the shipped configuration presets.
    """
    scripts_info = {
        "run_experiment.py": "Single entry point: train, sweep-epsilon, ablate, histogram and evaluate subcommands.",
        "experiments/train.py": "Trains one model (AT, TRADES, MLCAT or AWP) and writes report, histograms and checkpoints.",
        "experiments/sweep_epsilon.py": "Repeats training over epsilon (train = eval budget), l_min or strategy values.",
        "experiments/ablate.py": "Trains with a loss range of the training data removed and logs drop statistics.",
        "experiments/histogram.py": "Bins adversarial training losses of a stored checkpoint into loss ranges.",
        "experiments/evaluate.py": "Natural and PGD-K robust accuracy of a stored checkpoint.",
        "run_for_seeds.py": "Runs one config for several seeds and aggregates best/last/diff.",
        "utilities/reproduce_trends.py": "Desk-scale trend checks: epsilon gap, MLCAT effect, ablation and determinism.",
        "utilities/show_presets.py": "Displays this help information."
    }

    print("="*80)
    print("Python Scripts Overview")
    print("="*80)

    for script, description in scripts_info.items():
        print(f"\n{script}")
        print(f"  {description}")

    print("\n" + "="*80)
    print("Configuration Presets")
    print("="*80)
    for name in list_presets():
        config = load_config(name)
        tm = config.train_threat
        print(f"\n{name}")
        print(f"  {config.algorithm} ({config.mlcat.strategy.value}, l_min {config.mlcat.l_min}), "
              f"{config.dataset.source} data, layers {list(config.model.hidden)}")
        print(f"  {tm.norm.value} eps {format_epsilon(tm.epsilon)}, train PGD-{tm.steps}, "
              f"eval PGD-{config.eval_threat.steps}, {config.optim.epochs} epochs, "
              f"milestones {list(config.optim.milestones)}")

    print(f"\nFor more detailed usage, please refer to the README.md file.")
    print("="*80)


if __name__ == '__main__':
    show_presets()
