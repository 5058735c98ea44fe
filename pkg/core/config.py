"""
Experiment configuration.

A run is described by one JSON file. Named presets live in config/presets/;
any field can be overridden from the command line with a dotted path:

    --set optim.lr0=0.05 --set mlcat.strategy=LS --set train_threat.epsilon=0.0313725

MLCAT_CONFIG names the config (preset or path) used when none is given.
"""
import argparse
import json
import os
from dataclasses import dataclass, field, fields, is_dataclass, replace
from enum import Enum

from core.analysis import DEFAULT_EDGES, check_edges
from core.attacks import ThreatModel
from core.data_io import SYNTHETIC_KINDS
from core.errors import ConfigError, InputError
from core.naming import get_output_dir
from core.trainer import ALGORITHMS, AblationSpec, BaseAlgorithm, MlcatConfig, OptimConfig, TrainingPlan

PRESETS_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'config', 'presets')
DEFAULT_PRESET = 'desk-synthetic-smoke'


@dataclass(frozen=True)
class DatasetSpec:
    """source 'synthetic' uses kind/n/d/margin/test_fraction; source 'idx' uses the four file paths."""
    source: str = 'synthetic'
    kind: str = 'two_gaussians'
    n: int = 400
    d: int = 10
    margin: float = 3.0
    test_fraction: float = 0.25
    train_images: str = None
    train_labels: str = None
    test_images: str = None
    test_labels: str = None
    limit: int = None
    test_limit: int = None
    class_count: int = 2

    def validate(self, prefix='dataset'):
        if self.source == 'synthetic':
            if self.kind not in SYNTHETIC_KINDS:
                raise ConfigError(f"{prefix}.kind", f"unknown synthetic kind '{self.kind}'")
            if self.n < 2 or self.n % 2:
                raise ConfigError(f"{prefix}.n", f"must be an even number >= 2, got {self.n}")
            if self.d < (2 if self.kind == 'concentric_rings' else 1):
                raise ConfigError(f"{prefix}.d", f"too small for {self.kind}: {self.d}")
            if self.margin < 0:
                raise ConfigError(f"{prefix}.margin", f"must be >= 0, got {self.margin}")
            if not 0 < self.test_fraction < 1:
                raise ConfigError(f"{prefix}.test_fraction", f"must lie in (0, 1), got {self.test_fraction}")
            if self.class_count != 2:
                raise ConfigError(f"{prefix}.class_count", "synthetic tasks have 2 classes")
        elif self.source == 'idx':
            for name in ('train_images', 'train_labels', 'test_images', 'test_labels'):
                if not getattr(self, name):
                    raise ConfigError(f"{prefix}.{name}", "is required for IDX datasets")
            if self.class_count < 2:
                raise ConfigError(f"{prefix}.class_count", f"must be >= 2, got {self.class_count}")
        else:
            raise ConfigError(f"{prefix}.source", f"must be 'synthetic' or 'idx', got '{self.source}'")
        return self


@dataclass(frozen=True)
class ModelSpec:
    """Hidden layer widths; input and output sizes come from the dataset."""
    hidden: tuple = (32,)

    def __post_init__(self):
        object.__setattr__(self, 'hidden', tuple(int(h) for h in self.hidden))

    def sizes(self, in_features, class_count):
        return [in_features, *self.hidden, class_count]

    def validate(self, prefix='model'):
        if any(h < 1 for h in self.hidden):
            raise ConfigError(f"{prefix}.hidden", f"layer widths must be positive, got {list(self.hidden)}")
        return self


@dataclass(frozen=True)
class HistogramSpec:
    """every = 0 switches histograms off; otherwise one every k epochs plus the final epoch."""
    every: int = 0
    edges: tuple = DEFAULT_EDGES

    def __post_init__(self):
        object.__setattr__(self, 'edges', tuple(float(e) for e in self.edges))

    def due(self, epoch, epochs):
        return self.every > 0 and ((epoch + 1) % self.every == 0 or epoch == epochs - 1)

    def validate(self, prefix='histogram'):
        if self.every < 0:
            raise ConfigError(f"{prefix}.every", f"must be >= 0, got {self.every}")
        try:
            check_edges(self.edges)
        except InputError as e:
            raise ConfigError(f"{prefix}.edges", str(e)) from e
        return self


SECTIONS = {
    'dataset': DatasetSpec,
    'model': ModelSpec,
    'train_threat': ThreatModel,
    'eval_threat': ThreatModel,
    'optim': OptimConfig,
    'mlcat': MlcatConfig,
    'ablation': AblationSpec,
    'histogram': HistogramSpec,
}


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Everything one run needs. The top-level seed is the root of every random
    stream and always wins over optim.seed.
    """
    label: str = 'run'
    seed: int = 0
    algorithm: str = 'mlcat'
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    train_threat: ThreatModel = field(default_factory=ThreatModel)
    eval_threat: ThreatModel = field(default_factory=lambda: ThreatModel(steps=20))
    optim: OptimConfig = field(default_factory=OptimConfig)
    mlcat: MlcatConfig = field(default_factory=MlcatConfig)
    ablation: AblationSpec = field(default_factory=AblationSpec)
    histogram: HistogramSpec = field(default_factory=HistogramSpec)
    checkpoint_every: int = 0
    eval_batch_size: int = 512
    output_dir: str = None

    def __post_init__(self):
        if self.optim.seed != self.seed:
            object.__setattr__(self, 'optim', replace(self.optim, seed=self.seed))

    @property
    def run_dir(self):
        return self.output_dir or get_output_dir(self.label)

    def training_plan(self):
        return TrainingPlan(self.algorithm, self.train_threat, self.optim, self.mlcat, self.ablation)

    def to_dict(self):
        return _to_plain(self)

    @classmethod
    def from_dict(cls, record):
        if not isinstance(record, dict):
            raise ConfigError('config', "top level must be a JSON object")
        known = {f.name for f in fields(cls)}
        for key in record:
            if key not in known:
                raise ConfigError(key, "unknown field")
        record = dict(record)
        _check_types(cls, record)
        values = {}
        for key, value in record.items():
            values[key] = _build(SECTIONS[key], value, key) if key in SECTIONS else value
        return cls(**values)


def _to_plain(value):
    if is_dataclass(value):
        return {f.name: _to_plain(getattr(value, f.name)) for f in fields(value)}
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (tuple, list)):
        return [_to_plain(v) for v in value]
    return value


def _is_number(value):
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _check_types(cls, record, prefix=None):
    """
    Rejects values whose JSON type does not match the field: numbers for int and float
    fields (whole numbers for int), booleans for bool, strings for str and number
    lists for tuples. A None default means the field is optional.
    """
    for f in fields(cls):
        if f.name not in record:
            continue
        value = record[f.name]
        path = f"{prefix}.{f.name}" if prefix else f.name
        if value is None and f.default is None:
            continue
        if f.type is bool:
            ok = isinstance(value, bool)
            expected = "true or false"
        elif f.type is int:
            ok = _is_number(value) and float(value).is_integer()
            expected = "a whole number"
        elif f.type is float:
            ok = _is_number(value)
            expected = "a number"
        elif f.type is str:
            ok = isinstance(value, str)
            expected = "a string"
        elif f.type is tuple:
            ok = isinstance(value, (list, tuple)) and all(_is_number(v) for v in value)
            expected = "a list of numbers"
        else:
            continue
        if not ok:
            raise ConfigError(path, f"must be {expected}, got {json.dumps(value)}")
        if f.type is int:
            record[f.name] = int(value)


def _build(cls, record, prefix):
    if not isinstance(record, dict):
        raise ConfigError(prefix, "must be a JSON object")
    known = {f.name for f in fields(cls)}
    for key in record:
        if key not in known:
            raise ConfigError(f"{prefix}.{key}", "unknown field")
    record = dict(record)
    _check_types(cls, record, prefix)
    try:
        return cls(**record)
    except ConfigError as e:
        if e.field.startswith(prefix):
            raise
        raise ConfigError(f"{prefix}.{e.field.split('.')[-1]}", str(e).split(': ', 1)[-1]) from e
    except (TypeError, ValueError) as e:
        raise ConfigError(prefix, str(e)) from e


def validate(config: ExperimentConfig) -> ExperimentConfig:
    """Checks every field; raises ConfigError naming the first offending dotted path."""
    if not str(config.label).strip():
        raise ConfigError('label', "must not be empty")
    if config.algorithm not in ALGORITHMS:
        raise ConfigError('algorithm', f"unknown algorithm '{config.algorithm}', expected one of {list(ALGORITHMS)}")
    if int(config.seed) != config.seed or config.seed < 0:
        raise ConfigError('seed', f"must be a non-negative integer, got {config.seed}")
    config.dataset.validate()
    config.model.validate()
    config.train_threat.validate('train_threat')
    config.eval_threat.validate('eval_threat')
    config.optim.validate()
    config.mlcat.validate()
    if config.algorithm == 'awp' and config.mlcat.base is not BaseAlgorithm.AT:
        raise ConfigError('mlcat.base', "awp perturbs weights against the cross-entropy attack; base must be AT")
    config.ablation.validate(config.optim)
    config.histogram.validate()
    if config.checkpoint_every < 0:
        raise ConfigError('checkpoint_every', f"must be >= 0, got {config.checkpoint_every}")
    if config.eval_batch_size < 1:
        raise ConfigError('eval_batch_size', f"must be >= 1, got {config.eval_batch_size}")
    return config


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(config: ExperimentConfig, overrides) -> ExperimentConfig:
    """Applies 'dotted.path=value' strings. Values are parsed as JSON, falling back to a plain string."""
    if not overrides:
        return config
    record = config.to_dict()
    for item in overrides:
        if '=' not in item:
            raise ConfigError(item, "override must look like path=value")
        path, text = item.split('=', 1)
        keys = path.strip().split('.')
        target = record
        for depth, key in enumerate(keys[:-1]):
            if not isinstance(target.get(key), dict):
                raise ConfigError('.'.join(keys[:depth + 1]), "unknown section")
            target = target[key]
        if keys[-1] not in target:
            raise ConfigError(path, "unknown field")
        target[keys[-1]] = _parse_value(text)
        if keys == ['seed']:
            record['optim']['seed'] = record['seed']
    return ExperimentConfig.from_dict(record)


def preset_path(name):
    return os.path.join(PRESETS_DIR, f"{name}.json")


def list_presets():
    if not os.path.isdir(PRESETS_DIR):
        return []
    return sorted(f[:-5] for f in os.listdir(PRESETS_DIR) if f.endswith('.json'))


def load_config(name_or_path=None) -> ExperimentConfig:
    """
    Loads a config from a file path or a preset name.
    Falls back to MLCAT_CONFIG, then to the desk-synthetic-smoke preset.
    """
    name_or_path = name_or_path or os.environ.get('MLCAT_CONFIG') or DEFAULT_PRESET
    path = name_or_path if os.path.isfile(name_or_path) else preset_path(name_or_path)
    if not os.path.isfile(path):
        raise ConfigError('config', f"no config file or preset named '{name_or_path}' "
                                    f"(presets: {', '.join(list_presets())})")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            record = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError('config', f"could not read {path}: {e}") from e
    return ExperimentConfig.from_dict(record)


def save_config(config: ExperimentConfig, path):
    """Writes the config as indented JSON (Infinity is written as a bare token)."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(config.to_dict(), f, indent=2, allow_nan=True)
        f.write('\n')
    return path


def add_config_arguments(parser: argparse.ArgumentParser):
    parser.add_argument('--config', help='Preset name or path to a JSON config (default: MLCAT_CONFIG or desk-synthetic-smoke).')
    parser.add_argument('--set', dest='overrides', action='append', default=[], metavar='PATH=VALUE',
                        help='Override a config field by dotted path, e.g. --set optim.epochs=5. Repeatable.')
    parser.add_argument('--label', help='Run label (output directory name).')
    parser.add_argument('--seed', type=int, help='Root random seed.')
    parser.add_argument('--output-dir', help='Write artefacts here instead of <MLCAT_OUTPUT_ROOT>/<label>.')
    return parser


def resolve_config(args) -> ExperimentConfig:
    """Builds the validated config described by parsed command-line arguments."""
    config = apply_overrides(load_config(args.config), args.overrides)
    updates = {}
    if args.label:
        updates['label'] = args.label
    if args.seed is not None:
        updates['seed'] = args.seed
    if getattr(args, 'output_dir', None):
        updates['output_dir'] = args.output_dir
    if updates:
        config = replace(config, **updates)
    return validate(config)
