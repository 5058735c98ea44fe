import os

import pytest
from core.naming import epsilon_label, get_filename_slug, get_output_dir, get_output_root, get_run_name, sweep_run_label

def test_get_run_name():
    assert get_run_name('Desk MNIST / WP') == 'desk-mnist-wp'
    assert get_run_name('eps=8/255') == 'eps-8-255'
    assert get_run_name('  ') == 'run'

def test_get_output_dir(monkeypatch):
    monkeypatch.delenv('MLCAT_OUTPUT_ROOT', raising=False)
    assert get_output_dir('Desk MNIST') == os.path.join('output', 'desk-mnist')
    assert get_output_dir('desk', base_dir='test_output') == os.path.join('test_output', 'desk')

def test_output_root_from_environment(monkeypatch):
    monkeypatch.setenv('MLCAT_OUTPUT_ROOT', '/tmp/runs')
    assert get_output_root() == '/tmp/runs'
    assert get_output_dir('desk') == os.path.join('/tmp/runs', 'desk')

def test_get_filename_slug():
    assert get_filename_slug('desk-mnist.linf') == 'desk-mnist-linf'
    assert get_filename_slug('Full CIFAR-10') == 'full-cifar-10'

@pytest.mark.parametrize('epsilon, label', [(8 / 255, '8-255'), (0.0, '0'), (2 / 255, '2-255'), (0.25, '0.25')])
def test_epsilon_label(epsilon, label):
    assert epsilon_label(epsilon) == label

def test_sweep_run_label():
    assert sweep_run_label('Desk', 'eps', '8-255') == 'desk-eps-8-255'
