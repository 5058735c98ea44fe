"""
Dense multilayer perceptron with a hand-derived backward pass.

The backward pass returns gradients with respect to the inputs and to every
weight and bias in one sweep, which is all the attacks (input gradients) and the
trainer (weight gradients) need. Arrays are numpy float64 throughout.

Conventions:
    - hidden layers use ReLU, the output layer returns raw logits;
    - the ReLU derivative at exactly 0 is 0;
    - softmax and log-softmax subtract the row maximum before exponentiating.
"""
import json
import os
from dataclasses import dataclass
from enum import Enum

import numpy as np

from core.errors import DimensionError, FormatError, InputError, NumericError

Tensor = np.ndarray

CHECKPOINT_FORMAT = 'mlcat-mlp'
CHECKPOINT_VERSION = 1


class LossKind(str, Enum):
    CE = 'ce'
    KL = 'kl'


class KlGradient(str, Enum):
    """Which KL arguments carry gradient: the model output only, or the reference as well."""
    SECOND = 'second'
    BOTH = 'both'


@dataclass(frozen=True, eq=False)
class ParamSet:
    """
    One (weight, bias) pair per layer.
    Used for model parameters, their gradients, momentum buffers and weight perturbations.
    """
    weights: tuple
    biases: tuple

    def __add__(self, other):
        _check_param_shapes(self, other, 'parameter sum')
        return ParamSet(
            tuple(w + o for w, o in zip(self.weights, other.weights)),
            tuple(b + o for b, o in zip(self.biases, other.biases)),
        )

    def scaled(self, factor):
        return ParamSet(
            tuple(w * factor for w in self.weights),
            tuple(b * factor for b in self.biases),
        )

    def zeros_like(self):
        return ParamSet(
            tuple(np.zeros_like(w) for w in self.weights),
            tuple(np.zeros_like(b) for b in self.biases),
        )

    def weight_norms(self):
        return [float(np.linalg.norm(w)) for w in self.weights]

    def weight_norm(self):
        """L2 norm over all weight matrices taken together (biases excluded)."""
        return float(np.sqrt(sum(float(np.sum(w * w)) for w in self.weights)))

    def flat(self, include_biases=True):
        parts = [w.ravel() for w in self.weights]
        if include_biases:
            parts += [b.ravel() for b in self.biases]
        return np.concatenate(parts)

    def is_finite(self):
        return all(np.all(np.isfinite(w)) for w in self.weights) and \
            all(np.all(np.isfinite(b)) for b in self.biases)

    def shapes(self):
        return [(w.shape, b.shape) for w, b in zip(self.weights, self.biases)]


@dataclass(frozen=True, eq=False)
class MlpModel:
    """
    Layer k maps `weights[k].shape[1]` inputs to `weights[k].shape[0]` outputs.
    Treated as immutable: every update returns a new model.
    """
    weights: tuple
    biases: tuple

    def __post_init__(self):
        if len(self.weights) == 0 or len(self.weights) != len(self.biases):
            raise DimensionError("A model needs at least one layer and one bias per weight matrix.")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise DimensionError(f"Layer {k}: weight {w.shape} and bias {b.shape} do not match.")
            if k > 0 and w.shape[1] != self.weights[k - 1].shape[0]:
                raise DimensionError(
                    f"Layer {k} expects {w.shape[1]} inputs but layer {k - 1} produces {self.weights[k - 1].shape[0]}."
                )

    @property
    def sizes(self):
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def in_features(self):
        return self.weights[0].shape[1]

    @property
    def class_count(self):
        return self.weights[-1].shape[0]

    @property
    def depth(self):
        return len(self.weights)

    def params(self) -> ParamSet:
        return ParamSet(self.weights, self.biases)

    @classmethod
    def from_params(cls, params: ParamSet):
        return cls(tuple(params.weights), tuple(params.biases))


@dataclass(frozen=True, eq=False)
class DualGradient:
    """Gradient of (1/m) * sum_i w_i * loss_i with respect to the input batch and all parameters."""
    loss: float
    losses: np.ndarray
    input_grad: np.ndarray
    weight_grads: ParamSet


def _check_param_shapes(a, b, what):
    if a.shapes() != b.shapes():
        raise DimensionError(f"Shapes do not match for {what}: {a.shapes()} vs {b.shapes()}.")


def init_mlp(sizes, rng: np.random.Generator) -> MlpModel:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    if len(sizes) < 2 or any(int(s) < 1 for s in sizes):
        raise InputError(f"Layer sizes must list at least two positive integers, got {sizes}.")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-limit, limit, (fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpModel(tuple(weights), tuple(biases))


def _check_input(model, x):
    if x.ndim != 2:
        raise DimensionError(f"Input batch must be 2-D (batch x features), got shape {x.shape}.")
    if x.shape[1] != model.in_features:
        raise DimensionError(f"Layer 0 expects {model.in_features} input features, got {x.shape[1]}.")


def forward(model: MlpModel, x: Tensor) -> Tensor:
    """Returns the logits for a batch. Does not touch the model."""
    x = np.asarray(x, dtype=np.float64)
    _check_input(model, x)
    h = x
    last = model.depth - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ w.T + b
        if k < last:
            h = np.maximum(h, 0.0)
    return h


def forward_cache(model, x):
    """Forward pass keeping each layer input and pre-activation for backprop."""
    x = np.asarray(x, dtype=np.float64)
    _check_input(model, x)
    inputs, pre_acts = [], []
    h = x
    last = model.depth - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        inputs.append(h)
        z = h @ w.T + b
        if not np.all(np.isfinite(z)):
            raise NumericError("Non-finite activation in forward pass", layer=k)
        pre_acts.append(z)
        h = np.maximum(z, 0.0) if k < last else z
    return inputs, pre_acts, h


def softmax(logits):
    shifted = logits - np.max(logits, axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=1, keepdims=True)


def log_softmax(logits):
    shifted = logits - np.max(logits, axis=1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))


def _check_labels(labels, batch, classes):
    labels = np.asarray(labels)
    if labels.shape != (batch,):
        raise DimensionError(f"Expected {batch} labels, got shape {labels.shape}.")
    if not np.issubdtype(labels.dtype, np.integer):
        raise InputError("Labels must be integers.")
    if batch and (labels.min() < 0 or labels.max() >= classes):
        raise InputError(f"Labels must lie in [0, {classes}), got range [{labels.min()}, {labels.max()}].")
    return labels


def cross_entropy(logits: Tensor, labels) -> np.ndarray:
    """Per-example -log softmax(logits)[label]."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = _check_labels(labels, logits.shape[0], logits.shape[1])
    return -log_softmax(logits)[np.arange(logits.shape[0]), labels]


def kl_divergence(logits_p: Tensor, logits_q: Tensor) -> np.ndarray:
    """Per-example KL(softmax(p) || softmax(q))."""
    logits_p = np.asarray(logits_p, dtype=np.float64)
    logits_q = np.asarray(logits_q, dtype=np.float64)
    if logits_p.shape != logits_q.shape:
        raise DimensionError(f"KL arguments differ in shape: {logits_p.shape} vs {logits_q.shape}.")
    log_p = log_softmax(logits_p)
    log_q = log_softmax(logits_q)
    return np.sum(np.exp(log_p) * (log_p - log_q), axis=1)


def cross_entropy_logit_grad(logits, labels):
    """d CE_i / d logits_i, one row per example."""
    grad = softmax(logits)
    grad[np.arange(logits.shape[0]), labels] -= 1.0
    return grad


def kl_logit_grads(logits_p, logits_q):
    """
    Returns (d KL_i / d p_i, d KL_i / d q_i) for KL(softmax(p) || softmax(q)).
    The first term is only needed when the reference distribution carries gradient.
    """
    log_p = log_softmax(logits_p)
    log_q = log_softmax(logits_q)
    p = np.exp(log_p)
    kl = np.sum(p * (log_p - log_q), axis=1, keepdims=True)
    grad_p = p * (log_p - log_q) - p * kl
    grad_q = np.exp(log_q) - p
    return grad_p, grad_q


def backprop(model: MlpModel, x: Tensor, logit_grads: Tensor, cache=None):
    """
    Pushes d objective / d logits back through the network.
    Returns (input_grad, ParamSet of weight and bias gradients).
    """
    if cache is None:
        cache = forward_cache(model, x)
    inputs, pre_acts, logits = cache
    if logit_grads.shape != logits.shape:
        raise DimensionError(f"Logit gradient shape {logit_grads.shape} does not match logits {logits.shape}.")
    g = logit_grads
    weight_grads = [None] * model.depth
    bias_grads = [None] * model.depth
    for k in range(model.depth - 1, -1, -1):
        weight_grads[k] = g.T @ inputs[k]
        bias_grads[k] = np.sum(g, axis=0)
        g = g @ model.weights[k]
        if k > 0:
            g = g * (pre_acts[k - 1] > 0.0)
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(weight_grads[k]))):
            raise NumericError("Non-finite gradient in backward pass", layer=k)
    return g, ParamSet(tuple(weight_grads), tuple(bias_grads))


def backward_dual(model: MlpModel, x: Tensor, labels=None, loss_kind=LossKind.CE,
                  per_example_weights=None, reference_logits=None, reference_x=None,
                  kl_gradient=KlGradient.SECOND) -> DualGradient:
    """
    Gradient of (1/m) * sum_i w_i * loss_i with respect to inputs and parameters.

    loss_kind CE uses `labels`; loss_kind KL computes KL(softmax(reference) || softmax(f(x))).
    With kl_gradient SECOND the reference logits are held constant. With BOTH the
    reference is f(reference_x) and its parameter gradient is added in; input_grad
    still refers to `x` only.
    """
    x = np.asarray(x, dtype=np.float64)
    cache = forward_cache(model, x)
    logits = cache[2]
    m = logits.shape[0]
    if per_example_weights is None:
        per_example_weights = np.ones(m)
    per_example_weights = np.asarray(per_example_weights, dtype=np.float64)
    if per_example_weights.shape != (m,):
        raise DimensionError(f"Expected {m} per-example weights, got shape {per_example_weights.shape}.")

    through_reference = LossKind(loss_kind) is LossKind.KL and KlGradient(kl_gradient) is KlGradient.BOTH
    if LossKind(loss_kind) is LossKind.CE:
        labels = _check_labels(labels, m, logits.shape[1])
        losses = cross_entropy(logits, labels)
        per_row = cross_entropy_logit_grad(logits, labels)
    else:
        if through_reference:
            if reference_x is None:
                raise InputError("KL gradient through both arguments needs the reference inputs.")
            reference_cache = forward_cache(model, np.asarray(reference_x, dtype=np.float64))
            reference_logits = reference_cache[2]
        elif reference_logits is None:
            raise InputError("KL loss needs reference logits.")
        losses = kl_divergence(reference_logits, logits)
        reference_row, per_row = kl_logit_grads(reference_logits, logits)

    scale = per_example_weights / m
    input_grad, weight_grads = backprop(model, x, per_row * scale[:, None], cache=cache)
    if through_reference:
        _, from_reference = backprop(model, reference_x, reference_row * scale[:, None], cache=reference_cache)
        weight_grads = weight_grads + from_reference
    loss = float(np.sum(per_example_weights * losses) / m)
    return DualGradient(loss=loss, losses=losses, input_grad=input_grad, weight_grads=weight_grads)


def perturbed_view(model: MlpModel, v: ParamSet) -> MlpModel:
    """The model with parameters w + v. The original model is left as it was."""
    _check_param_shapes(model.params(), v, 'weight perturbation')
    return MlpModel.from_params(model.params() + v)


def save_checkpoint(model: MlpModel, path, metadata=None):
    """
    Writes a JSON checkpoint:
        {"format": "mlcat-mlp", "version": 1, "sizes": [...],
         "layers": [{"weight": [row-major floats], "bias": [floats]}, ...],
         "metadata": {...}}
    """
    record = {
        'format': CHECKPOINT_FORMAT,
        'version': CHECKPOINT_VERSION,
        'sizes': model.sizes,
        'layers': [
            {'weight': w.ravel().tolist(), 'bias': b.tolist()}
            for w, b in zip(model.weights, model.biases)
        ],
        'metadata': metadata or {},
    }
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(record, f)
    return path


def load_checkpoint(path):
    """Returns (model, metadata). Raises FormatError for anything that is not a valid checkpoint."""
    try:
        with open(path, 'r', encoding='utf-8') as f:
            record = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"Could not read checkpoint {path}: {e}") from e

    if not isinstance(record, dict) or record.get('format') != CHECKPOINT_FORMAT:
        raise FormatError(f"{path} is not an {CHECKPOINT_FORMAT} checkpoint.")
    if record.get('version') != CHECKPOINT_VERSION:
        raise FormatError(f"Unsupported checkpoint version {record.get('version')} in {path}.")

    try:
        weights, biases = _layers_from_record(record, path)
    except (KeyError, IndexError, TypeError, ValueError) as e:
        if isinstance(e, FormatError):
            raise
        raise FormatError(f"{path}: malformed checkpoint ({type(e).__name__}: {e}).") from e
    return MlpModel(tuple(weights), tuple(biases)), record.get('metadata', {})


def _layers_from_record(record, path):
    sizes = [int(s) for s in record['sizes']]
    layers = record['layers']
    if len(layers) != len(sizes) - 1:
        raise FormatError(f"{path}: {len(layers)} layers stored for sizes {sizes}.")
    weights, biases = [], []
    for k, layer in enumerate(layers):
        fan_in, fan_out = sizes[k], sizes[k + 1]
        w = np.asarray(layer['weight'], dtype=np.float64)
        b = np.asarray(layer['bias'], dtype=np.float64)
        if w.size != fan_in * fan_out or b.size != fan_out:
            raise FormatError(f"{path}: layer {k} holds {w.size}/{b.size} values, expected {fan_in * fan_out}/{fan_out}.")
        weights.append(w.reshape(fan_out, fan_in))
        biases.append(b)
    return weights, biases
