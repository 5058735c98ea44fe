"""
Core naming logic for the MLCAT lab.
Standardises run labels for output directories and artefact filenames.
"""
import os
import re


def get_output_root() -> str:
    """
    Root directory for all runs.
    MLCAT_OUTPUT_ROOT overrides the default 'output'.
    """
    return os.environ.get('MLCAT_OUTPUT_ROOT') or 'output'


def get_run_name(label: str) -> str:
    """
    Standardises a run label for use as a directory name.

    Example:
        'Desk MNIST / WP' -> 'desk-mnist-wp'
        'eps=8/255' -> 'eps-8-255'
    """
    name = re.sub(r'[^a-z0-9.]+', '-', label.strip().lower()).strip('-')
    return name or 'run'


def get_output_dir(label: str, base_dir: str | None = None) -> str:
    """Returns the output directory for a run label."""
    return os.path.join(base_dir or get_output_root(), get_run_name(label))


def get_filename_slug(label: str) -> str:
    """
    Converts a run label into a hyphenated slug for filenames.

    Example:
        'desk-mnist.linf' -> 'desk-mnist-linf'
    """
    return get_run_name(label).replace('.', '-')


def epsilon_label(epsilon: float) -> str:
    """
    Short label for a perturbation budget.
    Budgets that are whole multiples of 1/255 keep the familiar k/255 form.

    Example:
        8/255 -> '8-255', 0 -> '0', 0.25 -> '0.25'
    """
    steps = epsilon * 255
    if abs(steps - round(steps)) < 1e-9:
        return '0' if round(steps) == 0 else f"{int(round(steps))}-255"
    return f"{epsilon:g}"


def sweep_run_label(label: str, parameter: str, value: str) -> str:
    """Label of one run inside a sweep, e.g. ('desk', 'eps', '8-255') -> 'desk-eps-8-255'."""
    return f"{get_run_name(label)}-{parameter}-{value}"
