import argparse
import math

import pytest

from core.attacks import Norm
from core.config import (ExperimentConfig, add_config_arguments, apply_overrides, list_presets, load_config,
                         resolve_config, save_config, validate)
from core.errors import ConfigError
from core.trainer import Strategy


def parse(argv):
    return add_config_arguments(argparse.ArgumentParser()).parse_args(argv)


def test_presets_load_and_validate():
    names = list_presets()
    assert 'desk-synthetic-smoke' in names
    assert 'desk-mnist-linf' in names
    for name in names:
        config = validate(load_config(name))
        assert config.label


def test_smoke_preset_values():
    config = load_config('desk-synthetic-smoke')
    assert config.algorithm == 'mlcat'
    assert config.mlcat.strategy is Strategy.WP
    assert config.train_threat.norm is Norm.LINF
    assert config.histogram.edges[-1] == math.inf
    assert config.optim.milestones == (2,)


def test_l2_preset_budget():
    tm = load_config('desk-mnist-l2').train_threat
    assert tm.norm is Norm.L2
    assert tm.epsilon == pytest.approx(128 / 255)


def test_dict_round_trip():
    config = load_config('desk-synthetic-smoke')
    assert ExperimentConfig.from_dict(config.to_dict()) == config


def test_save_and_load_file(tmp_path):
    config = apply_overrides(load_config('desk-synthetic-smoke'), ['mlcat.l_min=Infinity'])
    path = save_config(config, str(tmp_path / 'nested' / 'config.json'))
    again = load_config(path)
    assert again == config
    assert again.mlcat.l_min == math.inf


def test_overrides_use_dotted_paths():
    config = apply_overrides(load_config('desk-synthetic-smoke'),
                             ['optim.epochs=7', 'mlcat.strategy=LS', 'model.hidden=[8, 4]', 'label=other'])
    assert config.optim.epochs == 7
    assert config.mlcat.strategy is Strategy.LS
    assert config.model.hidden == (8, 4)
    assert config.label == 'other'


def test_seed_override_reaches_optimiser():
    config = apply_overrides(load_config('desk-synthetic-smoke'), ['seed=9'])
    assert config.seed == 9
    assert config.optim.seed == 9


def test_top_level_seed_wins():
    record = load_config('desk-synthetic-smoke').to_dict()
    record['seed'] = 4
    record['optim']['seed'] = 1
    assert ExperimentConfig.from_dict(record).optim.seed == 4


@pytest.mark.parametrize('override, field', [
    ('optim.nesterov=true', 'optim.nesterov'),
    ('training.epochs=3', 'training'),
    ('mlcat.strategy=XX', 'mlcat.strategy'),
])
def test_bad_overrides_name_the_field(override, field):
    with pytest.raises(ConfigError) as excinfo:
        apply_overrides(load_config('desk-synthetic-smoke'), [override])
    assert excinfo.value.field == field


def test_override_needs_equals_sign():
    with pytest.raises(ConfigError):
        apply_overrides(load_config('desk-synthetic-smoke'), ['optim.epochs'])


def test_unknown_top_level_field():
    record = load_config('desk-synthetic-smoke').to_dict()
    record['verbose'] = True
    with pytest.raises(ConfigError) as excinfo:
        ExperimentConfig.from_dict(record)
    assert excinfo.value.field == 'verbose'


@pytest.mark.parametrize('override, field', [
    ('train_threat.epsilon=-0.1', 'train_threat.epsilon'),
    ('eval_threat.steps=-1', 'eval_threat.steps'),
    ('algorithm="sgd"', 'algorithm'),
    ('dataset.n=7', 'dataset.n'),
    ('histogram.edges=[0.0, 1.0]', 'histogram.edges'),
    ('ablation.loss_lo=2.0', 'ablation.loss_lo'),
])
def test_validate_names_the_field(override, field):
    config = apply_overrides(load_config('desk-synthetic-smoke'), [override, 'ablation.mode=drop_small'])
    with pytest.raises(ConfigError) as excinfo:
        validate(config)
    assert excinfo.value.field == field


@pytest.mark.parametrize('override, field', [
    ('optim.epochs=abc', 'optim.epochs'),
    ('optim.epochs=2.5', 'optim.epochs'),
    ('train_threat.epsilon=abc', 'train_threat.epsilon'),
    ('train_threat.random_start=1', 'train_threat.random_start'),
    ('model.hidden=["a"]', 'model.hidden'),
    ('mlcat.l_min=true', 'mlcat.l_min'),
    ('label=3', 'label'),
    ('seed="x"', 'seed'),
])
def test_wrongly_typed_overrides_name_the_field(override, field):
    with pytest.raises(ConfigError) as excinfo:
        apply_overrides(load_config('desk-synthetic-smoke'), [override])
    assert excinfo.value.field == field


def test_whole_float_is_accepted_for_integer_fields():
    config = apply_overrides(load_config('desk-synthetic-smoke'), ['optim.epochs=3.0'])
    assert config.optim.epochs == 3
    assert isinstance(config.optim.epochs, int)


def test_awp_needs_adversarial_training_base():
    config = apply_overrides(load_config('desk-synthetic-smoke'), ['algorithm="awp"', 'mlcat.base=TRADES'])
    with pytest.raises(ConfigError) as excinfo:
        validate(config)
    assert excinfo.value.field == 'mlcat.base'


def test_cifar10_preset_matches_published_settings():
    assert 'paper-cifar10-linf' in list_presets()
    config = validate(load_config('paper-cifar10-linf'))
    assert config.train_threat.epsilon == pytest.approx(8 / 255)
    assert config.mlcat.l_min == pytest.approx(1.5)


def test_missing_preset():
    with pytest.raises(ConfigError) as excinfo:
        load_config('no-such-preset')
    assert excinfo.value.field == 'config'


def test_config_from_environment(monkeypatch, tmp_path):
    path = save_config(apply_overrides(load_config('desk-synthetic-smoke'), ['label=from-env']),
                       str(tmp_path / 'env.json'))
    monkeypatch.setenv('MLCAT_CONFIG', path)
    assert load_config().label == 'from-env'


def test_resolve_config_applies_command_line(tmp_path):
    args = parse(['--config', 'desk-synthetic-smoke', '--set', 'optim.epochs=2', '--label', 'cli',
                  '--seed', '3', '--output-dir', str(tmp_path)])
    config = resolve_config(args)
    assert config.optim.epochs == 2
    assert config.label == 'cli'
    assert config.optim.seed == 3
    assert config.run_dir == str(tmp_path)
