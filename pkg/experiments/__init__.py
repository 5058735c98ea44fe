"""
Experiment scripts. Each module exposes a run_* function for programmatic use,
an add_arguments/run_from_args pair for run_experiment.py and a standalone __main__.
"""
