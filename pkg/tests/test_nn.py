import json
import math
from decimal import Decimal, localcontext

import numpy as np
import pytest

from core.errors import DimensionError, FormatError, InputError, NumericError
from core.nn import (KlGradient, LossKind, MlpModel, ParamSet, backward_dual, cross_entropy, forward, forward_cache,
                     init_mlp, kl_divergence, load_checkpoint, log_softmax, perturbed_view, save_checkpoint, softmax)


def make_model(sizes, seed=0):
    """Random model with non-zero biases so every parameter matters."""
    rng = np.random.default_rng(seed)
    model = init_mlp(sizes, rng)
    biases = tuple(rng.uniform(-0.1, 0.1, b.shape) for b in model.biases)
    return MlpModel(model.weights, biases)


def random_sizes(rng):
    """Up to three layers, up to eight units each."""
    return [int(n) for n in rng.integers(2, 9, size=int(rng.integers(2, 5)))]


def kink_free_inputs(model, rng, shape, margin=1e-3):
    """Inputs whose hidden pre-activations all stay clear of the ReLU kink at 0."""
    while True:
        x = rng.uniform(size=shape)
        hidden = forward_cache(model, x)[1][:-1]
        if all(np.min(np.abs(z)) > margin for z in hidden):
            return x


def batch_objective(model, x, labels, loss_kind, weights, reference=None, reference_x=None):
    logits = forward(model, x)
    if loss_kind is LossKind.CE:
        losses = cross_entropy(logits, labels)
    elif reference_x is not None:
        losses = kl_divergence(forward(model, reference_x), logits)
    else:
        losses = kl_divergence(reference, logits)
    return float(np.sum(weights * losses) / len(losses))


def numeric_param_grads(model, x, labels, loss_kind, weights, reference=None, h=1e-5, reference_x=None):
    params = model.params()
    out = []
    for group in ('weights', 'biases'):
        grads = []
        for k, p in enumerate(getattr(params, group)):
            g = np.zeros_like(p)
            for idx in np.ndindex(p.shape):
                values = {}
                for sign in (1, -1):
                    layers = [q.copy() for q in getattr(params, group)]
                    layers[k][idx] += sign * h
                    shifted = MlpModel(tuple(layers), params.biases) if group == 'weights' \
                        else MlpModel(params.weights, tuple(layers))
                    values[sign] = batch_objective(shifted, x, labels, loss_kind, weights, reference, reference_x)
                g[idx] = (values[1] - values[-1]) / (2 * h)
            grads.append(g)
        out.append(grads)
    return out


def max_relative_error(analytic, numeric, floor=1e-5):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return float(np.max(np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), floor)))


def test_forward_zero_model_gives_zero_logits():
    model = MlpModel((np.zeros((4, 3)), np.zeros((2, 4))), (np.zeros(4), np.zeros(2)))
    x = np.random.default_rng(1).uniform(size=(5, 3))
    assert np.array_equal(forward(model, x), np.zeros((5, 2)))


def test_forward_identity_layer():
    model = MlpModel((np.eye(3),), (np.zeros(3),))
    x = np.array([[0.1, 0.5, 0.9], [1.0, 0.2, 0.3]])
    assert np.array_equal(forward(model, x), x)


def test_forward_matches_independent_matrix_chain():
    model = make_model([6, 5, 4], seed=3)
    x = np.random.default_rng(4).uniform(size=(7, 6))
    w1, w2 = model.weights
    b1, b2 = model.biases
    hidden = np.where(x.dot(w1.T) + b1 > 0, x.dot(w1.T) + b1, 0.0)
    expected = hidden.dot(w2.T) + b2
    assert np.max(np.abs(forward(model, x) - expected)) < 1e-12


def test_forward_rejects_wrong_width():
    model = make_model([6, 5, 4])
    with pytest.raises(DimensionError, match="Layer 0"):
        forward(model, np.zeros((2, 5)))


def test_model_rejects_broken_layer_chain():
    with pytest.raises(DimensionError, match="Layer 1"):
        MlpModel((np.zeros((4, 3)), np.zeros((2, 5))), (np.zeros(4), np.zeros(2)))


def test_forward_is_deterministic_and_leaves_model_alone():
    model = make_model([6, 5, 4], seed=5)
    before = [w.copy() for w in model.weights]
    x = np.random.default_rng(6).uniform(size=(3, 6))
    assert np.array_equal(forward(model, x), forward(model, x))
    assert all(np.array_equal(a, b) for a, b in zip(before, model.weights))


def test_cross_entropy_uniform_logits_is_log_classes():
    losses = cross_entropy(np.zeros((4, 10)), np.array([0, 3, 7, 9]))
    assert np.allclose(losses, math.log(10), atol=1e-12, rtol=0)


def test_cross_entropy_decreases_with_true_class_logit():
    logits = np.zeros((5, 3))
    logits[:, 1] = [0.0, 1.0, 5.0, 20.0, 200.0]
    losses = cross_entropy(logits, np.ones(5, dtype=int))
    assert np.all(np.diff(losses) < 0)
    assert np.all(np.isfinite(losses))


def test_cross_entropy_matches_high_precision_softmax():
    rng = np.random.default_rng(7)
    logits = rng.normal(scale=5.0, size=(6, 10))
    labels = rng.integers(0, 10, 6)
    losses = cross_entropy(logits, labels)
    with localcontext() as ctx:
        ctx.prec = 50
        for row, label, loss in zip(logits, labels, losses):
            total = sum(Decimal(float(v)).exp() for v in row)
            expected = total.ln() - Decimal(float(row[label]))
            assert abs(float(expected) - loss) < 1e-10


def test_cross_entropy_rejects_label_out_of_range():
    with pytest.raises(InputError):
        cross_entropy(np.zeros((2, 3)), np.array([0, 3]))


def test_softmax_rows_sum_to_one():
    logits = np.random.default_rng(8).normal(scale=50.0, size=(20, 10))
    assert np.allclose(softmax(logits).sum(axis=1), 1.0, atol=1e-12, rtol=0)
    assert np.all(np.isfinite(log_softmax(logits)))


def test_kl_of_identical_distributions_is_zero():
    logits = np.random.default_rng(9).normal(size=(4, 5))
    assert np.all(np.abs(kl_divergence(logits, logits)) < 1e-12)


def test_kl_matches_direct_summation():
    p_logits = np.zeros((1, 4))
    q_logits = np.array([[3.0, 0.0, -1.0, 0.5]])
    p = np.full(4, 0.25)
    q = np.exp(q_logits[0]) / np.exp(q_logits[0]).sum()
    expected = float(np.sum(p * np.log(p / q)))
    assert kl_divergence(p_logits, q_logits)[0] == pytest.approx(expected, abs=1e-12)
    assert expected > 0


def test_kl_is_asymmetric():
    rng = np.random.default_rng(10)
    p, q = rng.normal(size=(1, 6)), rng.normal(scale=3.0, size=(1, 6))
    assert abs(kl_divergence(p, q)[0] - kl_divergence(q, p)[0]) > 1e-6


def test_kl_rejects_shape_mismatch():
    with pytest.raises(DimensionError):
        kl_divergence(np.zeros((2, 3)), np.zeros((2, 4)))


@pytest.mark.parametrize('seed', range(50))
def test_backward_dual_matches_finite_differences_ce(seed):
    rng = np.random.default_rng(100 + seed)
    sizes = random_sizes(rng)
    model = make_model(sizes, seed=seed)
    x = kink_free_inputs(model, rng, (5, sizes[0]))
    labels = rng.integers(0, sizes[-1], 5)
    weights = rng.uniform(0.5, 2.0, 5)

    result = backward_dual(model, x, labels, LossKind.CE, weights)
    numeric_w, numeric_b = numeric_param_grads(model, x, labels, LossKind.CE, weights)
    for analytic, numeric in zip(result.weight_grads.weights + result.weight_grads.biases, numeric_w + numeric_b):
        assert max_relative_error(analytic, numeric) < 1e-4

    coords = [(i, j) for i in range(5) for j in range(sizes[0])]
    for index in rng.choice(len(coords), min(20, len(coords)), replace=False):
        i, j = coords[index]
        plus, minus = x.copy(), x.copy()
        plus[i, j] += 1e-5
        minus[i, j] -= 1e-5
        numeric = (batch_objective(model, plus, labels, LossKind.CE, weights)
                   - batch_objective(model, minus, labels, LossKind.CE, weights)) / 2e-5
        assert max_relative_error(result.input_grad[i, j], numeric) < 1e-4


def test_backward_dual_matches_finite_differences_kl():
    model = make_model([4, 6, 3], seed=11)
    rng = np.random.default_rng(12)
    x = rng.uniform(size=(4, 4))
    reference = rng.normal(size=(4, 3))
    weights = np.ones(4)

    result = backward_dual(model, x, loss_kind=LossKind.KL, reference_logits=reference)
    numeric_w, numeric_b = numeric_param_grads(model, x, None, LossKind.KL, weights, reference)
    for analytic, numeric in zip(result.weight_grads.weights + result.weight_grads.biases, numeric_w + numeric_b):
        assert max_relative_error(analytic, numeric) < 1e-4


def test_backward_dual_kl_through_both_arguments_matches_finite_differences():
    model = make_model([4, 6, 3], seed=15)
    rng = np.random.default_rng(16)
    x = kink_free_inputs(model, rng, (4, 4))
    reference_x = kink_free_inputs(model, rng, (4, 4))
    weights = rng.uniform(0.5, 2.0, 4)

    result = backward_dual(model, x, loss_kind=LossKind.KL, per_example_weights=weights,
                           reference_x=reference_x, kl_gradient=KlGradient.BOTH)
    numeric_w, numeric_b = numeric_param_grads(model, x, None, LossKind.KL, weights, reference_x=reference_x)
    for analytic, numeric in zip(result.weight_grads.weights + result.weight_grads.biases, numeric_w + numeric_b):
        assert max_relative_error(analytic, numeric) < 1e-4


def test_kl_gradient_modes_differ_only_by_the_reference_term():
    model = make_model([4, 6, 3], seed=17)
    rng = np.random.default_rng(18)
    x, reference_x = rng.uniform(size=(3, 4)), rng.uniform(size=(3, 4))
    held = backward_dual(model, x, loss_kind=LossKind.KL, reference_logits=forward(model, reference_x))
    both = backward_dual(model, x, loss_kind=LossKind.KL, reference_x=reference_x, kl_gradient=KlGradient.BOTH)
    assert both.loss == held.loss
    assert np.array_equal(both.input_grad, held.input_grad)
    assert not np.allclose(both.weight_grads.flat(), held.weight_grads.flat())

    same = backward_dual(model, x, loss_kind=LossKind.KL, reference_x=x, kl_gradient=KlGradient.BOTH)
    np.testing.assert_allclose(same.weight_grads.flat(), 0.0, atol=1e-15)


def test_kl_through_both_arguments_needs_reference_inputs():
    model = make_model([4, 5, 3])
    with pytest.raises(InputError):
        backward_dual(model, np.zeros((2, 4)), loss_kind=LossKind.KL, reference_logits=np.zeros((2, 3)),
                      kl_gradient=KlGradient.BOTH)


def test_backward_dual_zero_weights_gives_zero_gradients():
    model = make_model([4, 5, 3], seed=13)
    x = np.random.default_rng(14).uniform(size=(3, 4))
    result = backward_dual(model, x, np.array([0, 1, 2]), per_example_weights=np.zeros(3))
    assert np.all(result.input_grad == 0)
    assert all(np.all(g == 0) for g in result.weight_grads.weights + result.weight_grads.biases)


def test_backward_dual_is_linear_in_example_weights():
    model = make_model([4, 5, 3], seed=15)
    rng = np.random.default_rng(16)
    x = rng.uniform(size=(4, 4))
    labels = rng.integers(0, 3, 4)
    weighted = backward_dual(model, x, labels, per_example_weights=np.array([2.0, 0.0, 0.0, 0.0]))
    single = backward_dual(model, x[:1], labels[:1])
    for a, b in zip(weighted.weight_grads.weights, single.weight_grads.weights):
        np.testing.assert_allclose(a, b * 2 / 4, atol=1e-10, rtol=0)
    np.testing.assert_allclose(weighted.input_grad[0], single.input_grad[0] * 2 / 4, atol=1e-10, rtol=0)
    assert np.all(weighted.input_grad[1:] == 0)


def test_backward_dual_rejects_wrong_weight_count():
    model = make_model([4, 3])
    with pytest.raises(DimensionError):
        backward_dual(model, np.zeros((2, 4)), np.array([0, 1]), per_example_weights=np.ones(3))


def test_relu_derivative_at_zero_is_zero():
    # The hidden pre-activation is exactly 0 for x = 0, so nothing flows back through it.
    model = MlpModel((np.array([[1.0]]), np.array([[1.0], [-1.0]])), (np.array([0.0]), np.zeros(2)))
    result = backward_dual(model, np.array([[0.0]]), np.array([0]))
    assert result.input_grad[0, 0] == 0.0
    assert result.weight_grads.weights[0][0, 0] == 0.0
    assert result.weight_grads.biases[0][0] == 0.0


def test_backward_dual_reports_non_finite_layer():
    model = MlpModel((np.full((2, 2), 1e308), np.full((2, 2), 1e308)), (np.zeros(2), np.zeros(2)))
    with pytest.raises(NumericError, match="layer"):
        backward_dual(model, np.ones((1, 2)), np.array([0]))


def test_perturbed_view_with_zero_perturbation_is_identical():
    model = make_model([4, 5, 3], seed=17)
    x = np.random.default_rng(18).uniform(size=(3, 4))
    view = perturbed_view(model, model.params().zeros_like())
    assert np.array_equal(forward(view, x), forward(model, x))


def test_perturbed_view_cancelling_all_parameters_gives_zero_outputs():
    model = make_model([4, 5, 3], seed=19)
    before = [w.copy() for w in model.weights]
    view = perturbed_view(model, model.params().scaled(-1.0))
    x = np.random.default_rng(20).uniform(size=(3, 4))
    assert np.array_equal(forward(view, x), np.zeros((3, 3)))
    assert all(np.array_equal(a, b) for a, b in zip(before, model.weights))


def test_perturbed_view_gradient_matches_finite_differences_at_shifted_point():
    model = make_model([4, 5, 3], seed=21)
    rng = np.random.default_rng(22)
    v = ParamSet(tuple(rng.normal(scale=0.05, size=w.shape) for w in model.weights),
                 tuple(np.zeros_like(b) for b in model.biases))
    x = rng.uniform(size=(3, 4))
    labels = rng.integers(0, 3, 3)
    view = perturbed_view(model, v)
    analytic = backward_dual(view, x, labels).weight_grads
    numeric_w, _ = numeric_param_grads(view, x, labels, LossKind.CE, np.ones(3))
    for a, n in zip(analytic.weights, numeric_w):
        assert max_relative_error(a, n) < 1e-4


def test_perturbed_view_rejects_shape_mismatch():
    model = make_model([4, 5, 3])
    other = make_model([4, 6, 3]).params()
    with pytest.raises(DimensionError):
        perturbed_view(model, other)


def test_checkpoint_round_trip(tmp_path):
    model = make_model([4, 5, 3], seed=23)
    path = save_checkpoint(model, str(tmp_path / 'ckpt' / 'model.json'), {'epoch': 4})
    loaded, metadata = load_checkpoint(path)
    assert metadata == {'epoch': 4}
    assert loaded.sizes == [4, 5, 3]
    assert all(np.array_equal(a, b) for a, b in zip(loaded.weights + loaded.biases, model.weights + model.biases))


def test_checkpoint_rejects_other_formats(tmp_path):
    path = tmp_path / 'bad.json'
    path.write_text(json.dumps({'format': 'something-else', 'version': 1}))
    with pytest.raises(FormatError):
        load_checkpoint(str(path))
    path.write_text('{not json')
    with pytest.raises(FormatError):
        load_checkpoint(str(path))
    with pytest.raises(FormatError):
        load_checkpoint(str(tmp_path / 'missing.json'))


@pytest.mark.parametrize('record', [
    {'sizes': [10, 2]},
    {'layers': []},
    {'sizes': [2, 1], 'layers': [{'weight': ['a', 'b'], 'bias': [0.0]}]},
    {'sizes': [2, 1], 'layers': [{'bias': [0.0]}]},
    {'sizes': 'two', 'layers': []},
])
def test_checkpoint_with_malformed_body_is_a_format_error(tmp_path, record):
    path = tmp_path / 'broken.json'
    path.write_text(json.dumps({'format': 'mlcat-mlp', 'version': 1, **record}))
    with pytest.raises(FormatError):
        load_checkpoint(str(path))
