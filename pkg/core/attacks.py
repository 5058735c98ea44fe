"""
Inner maximisation: projected gradient attacks under L-infinity and L2 threat models.

The L-infinity step follows sign(grad) exactly; the L2 step moves along the
per-example L2-normalised gradient. After every step the iterate is projected
back onto the epsilon-ball and then clamped to the pixel range, in that order.
"""
from dataclasses import asdict, dataclass, field, replace
from enum import Enum

import numpy as np

from core.errors import ConfigError, DimensionError
from core.nn import LossKind, backward_dual, cross_entropy, forward, kl_divergence
from core.seeding import per_example_uniform, substream

# Points this close to the L2 sphere count as inside, which keeps projection idempotent.
_L2_SLACK = 1e-12


class Norm(str, Enum):
    LINF = 'linf'
    L2 = 'l2'


class AttackObjective(str, Enum):
    CE = 'ce'
    KL = 'kl'


@dataclass(frozen=True)
class ThreatModel:
    """
    Perturbation region B = {x' : ||x' - x||_p <= epsilon} intersected with the pixel box.
    epsilon and alpha are in raw [0, 1] input units (8/255 is stored as 0.03137254901960784).
    """
    norm: Norm = Norm.LINF
    epsilon: float = 8 / 255
    alpha: float = 2 / 255
    steps: int = 10
    random_start: bool = True
    pixel_bounds: tuple = field(default=(0.0, 1.0))

    def __post_init__(self):
        try:
            object.__setattr__(self, 'norm', Norm(self.norm))
        except ValueError:
            raise ConfigError('norm', f"unknown norm '{self.norm}', expected one of {[n.value for n in Norm]}")
        object.__setattr__(self, 'pixel_bounds', tuple(float(b) for b in self.pixel_bounds))

    def validate(self, prefix='threat_model'):
        if not self.epsilon >= 0:
            raise ConfigError(f"{prefix}.epsilon", f"must be >= 0, got {self.epsilon}")
        if int(self.steps) != self.steps or self.steps < 0:
            raise ConfigError(f"{prefix}.steps", f"must be a non-negative integer, got {self.steps}")
        if self.steps > 0 and not self.alpha > 0:
            raise ConfigError(f"{prefix}.alpha", f"must be > 0 when steps > 0, got {self.alpha}")
        if len(self.pixel_bounds) != 2 or not self.pixel_bounds[0] < self.pixel_bounds[1]:
            raise ConfigError(f"{prefix}.pixel_bounds", f"must be (lo, hi) with lo < hi, got {self.pixel_bounds}")
        return self

    def with_epsilon(self, epsilon):
        return replace(self, epsilon=float(epsilon))

    def to_dict(self):
        record = asdict(self)
        record['norm'] = self.norm.value
        record['pixel_bounds'] = list(self.pixel_bounds)
        return record

    @classmethod
    def from_dict(cls, record):
        return cls(**record)


def project(x_adv, x_orig, tm: ThreatModel):
    """Nearest point of the epsilon-ball around x_orig, then clamped to the pixel range."""
    x_adv = np.asarray(x_adv, dtype=np.float64)
    x_orig = np.asarray(x_orig, dtype=np.float64)
    if x_adv.shape != x_orig.shape:
        raise DimensionError(f"Cannot project {x_adv.shape} onto a ball around {x_orig.shape}.")
    eps = tm.epsilon
    if tm.norm is Norm.LINF:
        out = np.clip(x_adv, x_orig - eps, x_orig + eps)
    else:
        delta = x_adv - x_orig
        norms = np.linalg.norm(delta, axis=1, keepdims=True)
        outside = norms > eps * (1.0 + _L2_SLACK)
        factor = eps / np.where(outside, norms, 1.0)
        out = np.where(outside, x_orig + delta * factor, x_adv)
    lo, hi = tm.pixel_bounds
    return np.clip(out, lo, hi)


def _random_start(x, tm, seed, epoch, ids, stream):
    width = x.shape[1]
    if tm.norm is Norm.LINF:
        noise = per_example_uniform(seed, stream, epoch, ids, -tm.epsilon, tm.epsilon, width)
    else:
        noise = np.empty_like(x)
        for row, example_id in enumerate(ids):
            rng = substream(seed, stream, epoch, example_id)
            direction = rng.standard_normal(width)
            direction /= max(np.linalg.norm(direction), 1e-300)
            radius = tm.epsilon * rng.uniform() ** (1.0 / width)
            noise[row] = radius * direction
    return project(x + noise, x, tm)


def _objective_values(model, x_adv, labels, objective, reference):
    logits = forward(model, x_adv)
    if objective is AttackObjective.KL:
        return kl_divergence(reference, logits)
    return cross_entropy(logits, labels)


def _run_pgd(model, x, labels, tm, objective, seed, epoch, ids, stream, keep_trace):
    tm.validate()
    objective = AttackObjective(objective)
    x = np.asarray(x, dtype=np.float64)
    if ids is None:
        ids = np.arange(x.shape[0])
    reference = forward(model, x) if objective is AttackObjective.KL else None
    loss_kind = LossKind.KL if objective is AttackObjective.KL else LossKind.CE

    if tm.epsilon == 0:
        trace = None
        if keep_trace:
            start = float(np.mean(_objective_values(model, x, labels, objective, reference)))
            trace = [start] * (tm.steps + 1)
        return x.copy(), trace

    x_adv = _random_start(x, tm, seed, epoch, ids, stream) if tm.random_start else x.copy()
    trace = [] if keep_trace else None
    for _ in range(tm.steps):
        grad = backward_dual(model, x_adv, labels, loss_kind=loss_kind, reference_logits=reference)
        if keep_trace:
            trace.append(float(np.mean(grad.losses)))
        g = grad.input_grad
        if tm.norm is Norm.LINF:
            step = np.sign(g)
        else:
            norms = np.linalg.norm(g, axis=1, keepdims=True)
            step = np.where(norms > 0, g / np.where(norms > 0, norms, 1.0), 0.0)
        x_adv = project(x_adv + tm.alpha * step, x, tm)
    if keep_trace:
        trace.append(float(np.mean(_objective_values(model, x_adv, labels, objective, reference))))
    return x_adv, trace


def pgd_attack(model, x, labels, tm: ThreatModel, objective=AttackObjective.CE, *,
               seed=0, epoch=0, ids=None, stream='attack'):
    """
    Runs tm.steps projected gradient steps and returns the adversarial batch.

    The random start for example i depends only on (seed, stream, epoch, ids[i]).
    For the KL objective the clean logits f(x) are the fixed reference distribution.
    """
    x_adv, _ = _run_pgd(model, x, labels, tm, objective, seed, epoch, ids, stream, keep_trace=False)
    return x_adv


def attack_loss_trace(model, x, labels, tm: ThreatModel, objective=AttackObjective.CE, *,
                      seed=0, epoch=0, ids=None, stream='attack'):
    """Mean objective at the starting point and after each step (tm.steps + 1 values)."""
    _, trace = _run_pgd(model, x, labels, tm, objective, seed, epoch, ids, stream, keep_trace=True)
    return trace
