"""
Outer minimisation: SGD with momentum and a milestone schedule, standard AT,
TRADES, the MLCAT prototype with its loss-adjustment strategies, the AWP
baseline and loss-range data ablation.

One mini-batch goes through the same three stages whatever the algorithm:
    1. inner maximisation (PGD with the base algorithm's objective);
    2. a per-example objective over the adversarial batch;
    3. one momentum SGD step on a weighted average of that objective.
Strategies only change the per-example weights in stage 3, or the point the
gradient is taken at, so plain AT stays reachable as a special case bit for bit.
"""
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np

from core.attacks import AttackObjective, pgd_attack
from core.data_io import Batch, batches
from core.errors import ConfigError, ConsistencyError, InputError, NumericError
from core.nn import (KlGradient, LossKind, MlpModel, ParamSet, backward_dual, cross_entropy, forward,
                     kl_divergence, perturbed_view)

# Below this the small-loss gradient is treated as vanished and no perturbation is applied.
VANISHING_NORM = 1e-12

ALGORITHMS = ('at', 'trades', 'mlcat', 'awp')


class Strategy(str, Enum):
    LS = 'LS'
    WP = 'WP'
    LS_DOWN = 'LS_down'
    WP_DOWN = 'WP_down'
    IDENTITY = 'identity'
    DROP = 'drop'


class BaseAlgorithm(str, Enum):
    AT = 'AT'
    TRADES = 'TRADES'


class WpScope(str, Enum):
    LAYERWISE = 'layerwise'
    GLOBAL = 'global'


class TradesGate(str, Enum):
    COMBINED = 'combined'
    KL = 'kl'


class AblationMode(str, Enum):
    NONE = 'none'
    DROP_SMALL = 'drop_small'
    DROP_LARGE = 'drop_large'
    DROP_SMALL_ORIGINAL = 'drop_small_original'
    DROP_SMALL_TRANSFORMED = 'drop_small_transformed'


def _plain(record):
    for key, value in record.items():
        if isinstance(value, Enum):
            record[key] = value.value
        elif isinstance(value, tuple):
            record[key] = list(value)
    return record


@dataclass(frozen=True)
class OptimConfig:
    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    milestones: tuple = (100, 150)
    decay_factor: float = 0.1
    epochs: int = 200
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'milestones', tuple(int(m) for m in self.milestones))

    def lr_at(self, epoch):
        """lr0 * decay_factor ** (number of milestones <= epoch). Epochs count from 0."""
        passed = sum(1 for m in self.milestones if m <= epoch)
        return self.lr0 * self.decay_factor ** passed

    def validate(self, prefix='optim'):
        if not self.lr0 > 0:
            raise ConfigError(f"{prefix}.lr0", f"must be > 0, got {self.lr0}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"{prefix}.momentum", f"must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"{prefix}.weight_decay", f"must be >= 0, got {self.weight_decay}")
        if not 0 < self.decay_factor <= 1:
            raise ConfigError(f"{prefix}.decay_factor", f"must lie in (0, 1], got {self.decay_factor}")
        if self.epochs < 1:
            raise ConfigError(f"{prefix}.epochs", f"must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"{prefix}.batch_size", f"must be >= 1, got {self.batch_size}")
        if list(self.milestones) != sorted(set(self.milestones)) or any(m < 1 for m in self.milestones):
            raise ConfigError(f"{prefix}.milestones", f"must be strictly ascending positive epochs, got {list(self.milestones)}")
        return self

    def to_dict(self):
        return _plain(asdict(self))


@dataclass(frozen=True)
class MlcatConfig:
    l_min: float = 1.5
    strategy: Strategy = Strategy.WP
    gamma: float = 0.01
    wp_scope: WpScope = WpScope.LAYERWISE
    trades_beta: float = 6.0
    base: BaseAlgorithm = BaseAlgorithm.AT
    trades_gate: TradesGate = TradesGate.COMBINED
    loss_floor: float = 1e-3

    def __post_init__(self):
        for name, kind in (('strategy', Strategy), ('wp_scope', WpScope), ('base', BaseAlgorithm),
                           ('trades_gate', TradesGate)):
            try:
                object.__setattr__(self, name, kind(getattr(self, name)))
            except ValueError:
                raise ConfigError(f"mlcat.{name}", f"unknown value '{getattr(self, name)}', "
                                                   f"expected one of {[k.value for k in kind]}")

    def validate(self, prefix='mlcat'):
        if np.isnan(self.l_min):
            raise ConfigError(f"{prefix}.l_min", "must be a number")
        if not self.gamma >= 0:
            raise ConfigError(f"{prefix}.gamma", f"must be >= 0, got {self.gamma}")
        if not self.trades_beta >= 0:
            raise ConfigError(f"{prefix}.trades_beta", f"must be >= 0, got {self.trades_beta}")
        if not self.loss_floor > 0:
            raise ConfigError(f"{prefix}.loss_floor", f"must be > 0, got {self.loss_floor}")
        return self

    @property
    def scaling_cap(self):
        return self.l_min / self.loss_floor

    def to_dict(self):
        return _plain(asdict(self))


@dataclass(frozen=True)
class AblationSpec:
    mode: AblationMode = AblationMode.NONE
    loss_lo: float = 0.0
    loss_hi: float = 1.5
    start_epoch: int = None

    def __post_init__(self):
        try:
            object.__setattr__(self, 'mode', AblationMode(self.mode))
        except ValueError:
            raise ConfigError('ablation.mode', f"unknown mode '{self.mode}', "
                                               f"expected one of {[m.value for m in AblationMode]}")

    def resolved_start(self, milestones):
        """drop_small starts at epoch 0, every other mode at the first learning-rate decay."""
        if self.start_epoch is not None:
            return self.start_epoch
        if self.mode is AblationMode.DROP_SMALL or not milestones:
            return 0
        return milestones[0]

    def validate(self, optim: OptimConfig, prefix='ablation'):
        if self.mode is AblationMode.NONE:
            return self
        if not self.loss_lo < self.loss_hi:
            raise ConfigError(f"{prefix}.loss_lo", f"must be below loss_hi ({self.loss_lo} >= {self.loss_hi})")
        start = self.resolved_start(optim.milestones)
        if not 0 <= start < optim.epochs:
            raise ConfigError(f"{prefix}.start_epoch", f"{start} is outside the training horizon [0, {optim.epochs})")
        if self.mode in (AblationMode.DROP_SMALL_ORIGINAL, AblationMode.DROP_SMALL_TRANSFORMED):
            if not optim.milestones:
                raise ConfigError(f"{prefix}.mode", f"{self.mode.value} needs at least one learning-rate milestone")
            if start < optim.milestones[0]:
                raise ConfigError(f"{prefix}.start_epoch",
                                  f"{self.mode.value} cannot start before the first milestone ({optim.milestones[0]})")
        return self

    def to_dict(self):
        return _plain(asdict(self))


@dataclass(frozen=True, eq=False)
class SgdState:
    """Momentum buffers, one per parameter."""
    buffers: ParamSet

    @classmethod
    def zeros(cls, model: MlpModel):
        return cls(model.params().zeros_like())


def sgd_step(model: MlpModel, grads: ParamSet, state: SgdState, oc: OptimConfig, epoch, batch=None):
    """
    buf <- momentum * buf + (grad + weight_decay * w)
    w   <- w - lr(epoch) * buf
    Applied to weights and biases alike. Returns (model, state).
    """
    if not grads.is_finite():
        raise NumericError("Non-finite gradient reached the optimiser", epoch=epoch, batch=batch)
    if state is None:
        state = SgdState.zeros(model)
    lr = oc.lr_at(epoch)
    params = model.params()

    def update(ws, gs, bufs):
        new_w, new_buf = [], []
        for w, g, buf in zip(ws, gs, bufs):
            buf = oc.momentum * buf + (g + oc.weight_decay * w)
            new_buf.append(buf)
            new_w.append(w - lr * buf)
        return tuple(new_w), tuple(new_buf)

    weights, weight_bufs = update(params.weights, grads.weights, state.buffers.weights)
    biases, bias_bufs = update(params.biases, grads.biases, state.buffers.biases)
    return MlpModel(weights, biases), SgdState(ParamSet(weight_bufs, bias_bufs))


class AdversarialCrossEntropy:
    """Per-example CE(f(x'_i), y_i), the standard AT objective."""

    def __init__(self, x_adv, labels):
        self.x_adv = x_adv
        self.labels = labels

    def __len__(self):
        return self.x_adv.shape[0]

    def losses(self, model):
        return cross_entropy(forward(model, self.x_adv), self.labels)

    def gate_losses(self, model):
        return self.losses(model)

    def gradients(self, model, weights) -> ParamSet:
        return backward_dual(model, self.x_adv, self.labels, loss_kind=LossKind.CE,
                             per_example_weights=weights).weight_grads

    def subset(self, mask):
        return AdversarialCrossEntropy(self.x_adv[mask], self.labels[mask])


class TradesObjective:
    """
    Per-example CE(f(x_i), y_i) + beta * KL(f(x_i) || f(x'_i)).
    During outer minimisation both KL arguments carry gradient.
    """

    def __init__(self, x, x_adv, labels, beta, gate=TradesGate.COMBINED):
        self.x = x
        self.x_adv = x_adv
        self.labels = labels
        self.beta = beta
        self.gate = TradesGate(gate)

    def __len__(self):
        return self.x.shape[0]

    def _parts(self, model):
        clean = forward(model, self.x)
        return cross_entropy(clean, self.labels), kl_divergence(clean, forward(model, self.x_adv))

    def losses(self, model):
        ce, kl = self._parts(model)
        return ce + self.beta * kl

    def gate_losses(self, model):
        ce, kl = self._parts(model)
        if self.gate is TradesGate.KL:
            return kl
        return ce + self.beta * kl

    def gradients(self, model, weights) -> ParamSet:
        weights = np.asarray(weights, dtype=np.float64)
        clean = backward_dual(model, self.x, self.labels, LossKind.CE, weights)
        robust = backward_dual(model, self.x_adv, loss_kind=LossKind.KL, per_example_weights=self.beta * weights,
                               reference_x=self.x, kl_gradient=KlGradient.BOTH)
        return clean.weight_grads + robust.weight_grads

    def subset(self, mask):
        return TradesObjective(self.x[mask], self.x_adv[mask], self.labels[mask], self.beta, self.gate)


def inner_maximization(model, batch: Batch, tm, base=BaseAlgorithm.AT, *, seed=0, epoch=0):
    """Adversarial batch for the base algorithm: CE for AT, KL against the clean output for TRADES."""
    objective = AttackObjective.KL if BaseAlgorithm(base) is BaseAlgorithm.TRADES else AttackObjective.CE
    return pgd_attack(model, batch.x, batch.y, tm, objective, seed=seed, epoch=epoch, ids=batch.ids)


def build_objective(batch: Batch, x_adv, mc: MlcatConfig):
    if mc.base is BaseAlgorithm.TRADES:
        return TradesObjective(batch.x, x_adv, batch.y, mc.trades_beta, mc.trades_gate)
    return AdversarialCrossEntropy(x_adv, batch.y)


class MinibatchResult(NamedTuple):
    model: MlpModel
    state: SgdState
    losses: np.ndarray
    adjusted_count: int
    skipped: bool
    events: list


@dataclass(frozen=True, eq=False)
class WeightPerturbation:
    v: ParamSet
    raw_norm: float
    gate: np.ndarray
    adjusted_losses: np.ndarray
    vanished: bool = False


def _event(kind, epoch, batch, **detail):
    return {'kind': kind, 'epoch': epoch, 'batch': batch, 'detail': detail}


def small_loss_gate(gate_losses, l_min):
    """Strict indicator 1(l_i < l_min); the boundary case l_i == l_min passes through unadjusted."""
    if l_min <= 0:
        return np.zeros(len(gate_losses), dtype=bool)
    return np.asarray(gate_losses) < l_min


def adjust_loss_scaling(loss_i, l_min, direction='up', loss_floor=1e-3):
    """
    Returns (adjusted value, gradient multiplier) for small-loss examples; loss_i is a
    scalar or an array. The multiplier c = l_min / max(loss_i, loss_floor) is a constant,
    so the adjusted gradient is c times the example's own gradient. 'down' divides by c instead.
    """
    if direction not in ('up', 'down'):
        raise InputError(f"direction must be 'up' or 'down', got '{direction}'")
    c = l_min / np.maximum(loss_i, loss_floor)
    multiplier = c if direction == 'up' else 1.0 / c
    return multiplier * loss_i, multiplier


def _scale_perturbation(model, raw: ParamSet, gamma, wp_scope):
    weights = model.params().weights
    if WpScope(wp_scope) is WpScope.GLOBAL:
        norm = raw.weight_norm()
        factor = gamma * model.params().weight_norm() / norm
        scaled = tuple(g * factor for g in raw.weights)
    else:
        scaled = []
        for w, g in zip(weights, raw.weights):
            g_norm = np.linalg.norm(g)
            scaled.append(g * (gamma * np.linalg.norm(w) / g_norm) if g_norm > 0 else np.zeros_like(g))
        scaled = tuple(scaled)
    return ParamSet(scaled, tuple(np.zeros_like(b) for b in model.biases))


def _perturbation(model, objective, gate, gamma, wp_scope, direction):
    """v from the gradient of the gated loss sum, rescaled to gamma times the weight norm."""
    raw = objective.gradients(model, gate.astype(np.float64))
    raw_norm = raw.weight_norm()
    if raw_norm < VANISHING_NORM:
        return WeightPerturbation(model.params().zeros_like(), raw_norm, gate,
                                  objective.losses(model)[gate], vanished=True)
    v = _scale_perturbation(model, raw, gamma, wp_scope)
    if direction == 'subtract':
        v = v.scaled(-1.0)
    adjusted = objective.losses(perturbed_view(model, v))[gate]
    return WeightPerturbation(v, raw_norm, gate, adjusted)


def adjust_weight_perturbation(model, x_adv, labels, l_min, gamma, wp_scope=WpScope.LAYERWISE,
                               direction='add', objective=None):
    """
    Builds the weight perturbation for the small-loss examples of an adversarial batch.
    Returns None when no example is below l_min. A vanished gradient returns v = 0
    with `vanished` set.
    """
    if direction not in ('add', 'subtract'):
        raise InputError(f"direction must be 'add' or 'subtract', got '{direction}'")
    if objective is None:
        objective = AdversarialCrossEntropy(x_adv, labels)
    gate = small_loss_gate(objective.gate_losses(model), l_min)
    if not gate.any():
        return None
    return _perturbation(model, objective, gate, gamma, wp_scope, direction)


def _weight_perturbed_gradients(model, objective, gate, gamma, wp_scope, direction, epoch, batch_index):
    """
    Gated examples contribute their gradient taken at w + v, the rest their gradient at w.
    The step is then applied to w: v is never written into the model.
    """
    m = len(objective)
    if gamma == 0:
        return objective.gradients(model, np.ones(m)), []
    perturbation = _perturbation(model, objective, gate, gamma, wp_scope, direction)
    if perturbation.vanished:
        event = _event('vanishing_perturbation', epoch, batch_index, raw_norm=perturbation.raw_norm)
        return objective.gradients(model, np.ones(m)), [event]
    grads = objective.gradients(perturbed_view(model, perturbation.v), gate.astype(np.float64))
    if not gate.all():
        grads = objective.gradients(model, (~gate).astype(np.float64)) + grads
    return grads, []


def _plain_step(model, objective, oc, state, epoch, batch_index):
    losses = objective.losses(model)
    grads = objective.gradients(model, np.ones(len(objective)))
    model, state = sgd_step(model, grads, state, oc, epoch, batch_index)
    return MinibatchResult(model, state, losses, 0, False, [])


def mlcat_outer_step(model, objective, mc: MlcatConfig, oc: OptimConfig, state=None, epoch=0, batch_index=None):
    """
    Accumulates l_i for examples at or above l_min and S(l_i) for the rest, averages
    over all m examples and takes one SGD step.
    """
    losses = objective.losses(model)
    gate_losses = objective.gate_losses(model)
    gate = small_loss_gate(gate_losses, mc.l_min)
    m = len(objective)
    adjusted = int(gate.sum())
    events = []

    if mc.strategy is Strategy.IDENTITY or adjusted == 0:
        grads = objective.gradients(model, np.ones(m))
    elif mc.strategy in (Strategy.LS, Strategy.LS_DOWN):
        gate_values = gate_losses[gate]
        direction = 'up' if mc.strategy is Strategy.LS else 'down'
        _, multipliers = adjust_loss_scaling(gate_values, mc.l_min, direction, mc.loss_floor)
        weights = np.ones(m)
        weights[gate] = multipliers
        capped = int(np.sum(gate_values < mc.loss_floor))
        if capped:
            events.append(_event('loss_scaling_cap', epoch, batch_index, count=capped, cap=mc.scaling_cap))
        grads = objective.gradients(model, weights)
    elif mc.strategy is Strategy.DROP:
        if gate.all():
            events.append(_event('skip_step', epoch, batch_index, reason='every example below l_min'))
            return MinibatchResult(model, state, losses, adjusted, True, events)
        grads = objective.gradients(model, (~gate).astype(np.float64))
    else:
        direction = 'add' if mc.strategy is Strategy.WP else 'subtract'
        grads, wp_events = _weight_perturbed_gradients(model, objective, gate, mc.gamma, mc.wp_scope,
                                                       direction, epoch, batch_index)
        events.extend(wp_events)

    model, state = sgd_step(model, grads, state, oc, epoch, batch_index)
    return MinibatchResult(model, state, losses, adjusted, False, events)


def awp_outer_step(model, objective, gamma, oc: OptimConfig, state=None, epoch=0, batch_index=None,
                   wp_scope=WpScope.LAYERWISE):
    """AWP: every example is evaluated at the perturbed weights."""
    losses = objective.losses(model)
    gate = np.ones(len(objective), dtype=bool)
    grads, events = _weight_perturbed_gradients(model, objective, gate, gamma, WpScope(wp_scope), 'add',
                                                epoch, batch_index)
    model, state = sgd_step(model, grads, state, oc, epoch, batch_index)
    return MinibatchResult(model, state, losses, len(objective), False, events)


def at_minibatch(model, batch: Batch, tm, oc: OptimConfig, epoch, state=None, *, seed=None, batch_index=None):
    """Standard adversarial training on one mini-batch."""
    seed = oc.seed if seed is None else seed
    x_adv = inner_maximization(model, batch, tm, BaseAlgorithm.AT, seed=seed, epoch=epoch)
    return _plain_step(model, AdversarialCrossEntropy(x_adv, batch.y), oc, state, epoch, batch_index)


def mlcat_minibatch(model, batch: Batch, tm, mc: MlcatConfig, oc: OptimConfig, epoch, state=None, *,
                    seed=None, batch_index=None):
    """One MLCAT-prototype step. Returns losses before adjustment and the adjusted count."""
    seed = oc.seed if seed is None else seed
    x_adv = inner_maximization(model, batch, tm, mc.base, seed=seed, epoch=epoch)
    return mlcat_outer_step(model, build_objective(batch, x_adv, mc), mc, oc, state, epoch, batch_index)


def trades_minibatch(model, batch: Batch, tm, mc: MlcatConfig, oc: OptimConfig, epoch, state=None, *,
                     seed=None, batch_index=None):
    if mc.base is not BaseAlgorithm.TRADES:
        raise ConfigError('mlcat.base', "trades_minibatch needs base TRADES")
    return mlcat_minibatch(model, batch, tm, mc, oc, epoch, state, seed=seed, batch_index=batch_index)


def awp_minibatch(model, batch: Batch, tm, gamma, oc: OptimConfig, epoch, state=None, *,
                  wp_scope=WpScope.LAYERWISE, seed=None, batch_index=None):
    seed = oc.seed if seed is None else seed
    x_adv = inner_maximization(model, batch, tm, BaseAlgorithm.AT, seed=seed, epoch=epoch)
    return awp_outer_step(model, AdversarialCrossEntropy(x_adv, batch.y), gamma, oc, state, epoch,
                          batch_index, wp_scope)


def ablation_filter(losses, ids, store, spec: AblationSpec, epoch, milestones=()):
    """
    Keep mask (True = train on it) for one batch.

    drop_small / drop_large drop current losses in [loss_lo, loss_hi).
    The original/transformed variants split those by the loss each example had at the
    first-milestone snapshot: below loss_hi there (original) or at/above it (transformed).
    """
    losses = np.asarray(losses)
    keep = np.ones(losses.shape[0], dtype=bool)
    if spec.mode is AblationMode.NONE or epoch < spec.resolved_start(milestones):
        return keep
    in_range = (losses >= spec.loss_lo) & (losses < spec.loss_hi)
    if spec.mode in (AblationMode.DROP_SMALL, AblationMode.DROP_LARGE):
        return ~in_range
    if store is None or not milestones:
        raise ConsistencyError(f"{spec.mode.value} needs a loss trace store and a milestone snapshot")
    snapshot = store.snapshot_losses(milestones[0], ids)
    if spec.mode is AblationMode.DROP_SMALL_ORIGINAL:
        return ~(in_range & (snapshot < spec.loss_hi))
    return ~(in_range & (snapshot >= spec.loss_hi))


@dataclass(frozen=True)
class TrainingPlan:
    """Everything the epoch loop needs, independent of where it came from."""
    algorithm: str
    train_threat: object
    optim: OptimConfig
    mlcat: MlcatConfig = field(default_factory=MlcatConfig)
    ablation: AblationSpec = field(default_factory=AblationSpec)

    @property
    def base(self):
        if self.algorithm in ('at', 'awp'):
            return BaseAlgorithm.AT
        if self.algorithm == 'trades':
            return BaseAlgorithm.TRADES
        return self.mlcat.base


@dataclass
class EpochStats:
    epoch: int
    lr: float
    mean_adv_loss: float
    adjusted_count: int = 0
    skipped_batches: int = 0
    kept_count: int = 0
    dropped_count: int = 0
    events: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def _outer_step(plan: TrainingPlan, model, objective, state, epoch, batch_index):
    if plan.algorithm == 'mlcat':
        return mlcat_outer_step(model, objective, plan.mlcat, plan.optim, state, epoch, batch_index)
    if plan.algorithm == 'awp':
        return awp_outer_step(model, objective, plan.mlcat.gamma, plan.optim, state, epoch, batch_index,
                              plan.mlcat.wp_scope)
    return _plain_step(model, objective, plan.optim, state, epoch, batch_index)


def train_epoch(model, state, ds, plan: TrainingPlan, epoch, trace_store=None):
    """
    One pass over `ds`. Returns (model, state, EpochStats).
    Pre-adjustment adversarial losses of every example go to `trace_store` if given.
    """
    if plan.algorithm not in ALGORITHMS:
        raise ConfigError('algorithm', f"unknown algorithm '{plan.algorithm}', expected one of {list(ALGORITHMS)}")
    if plan.algorithm == 'awp' and plan.mlcat.base is not BaseAlgorithm.AT:
        raise ConfigError('mlcat.base', "awp perturbs weights against the cross-entropy attack; base must be AT")
    oc = plan.optim
    mc = plan.mlcat if plan.algorithm in ('mlcat', 'awp') else _base_only(plan)
    if state is None:
        state = SgdState.zeros(model)
    if trace_store is not None and epoch in oc.milestones:
        trace_store.take_snapshot(epoch)

    stats = EpochStats(epoch=epoch, lr=oc.lr_at(epoch), mean_adv_loss=0.0)
    loss_sum = 0.0
    seen = 0
    drops = 0
    for batch_index, batch in enumerate(batches(ds, oc.batch_size, epoch, oc.seed)):
        try:
            x_adv = inner_maximization(model, batch, plan.train_threat, plan.base, seed=oc.seed, epoch=epoch)
            objective = build_objective(batch, x_adv, mc)
            losses = objective.losses(model)
            loss_sum += float(np.sum(losses))
            seen += len(losses)
            if trace_store is not None:
                trace_store.record(epoch, batch.ids, losses)

            keep = ablation_filter(losses, batch.ids, trace_store, plan.ablation, epoch, oc.milestones)
            kept = int(keep.sum())
            stats.kept_count += kept
            stats.dropped_count += len(keep) - kept
            if kept < len(keep):
                drops += 1
                if kept == 0:
                    stats.skipped_batches += 1
                    stats.events.append(_event('skip_step', epoch, batch_index, reason='ablation removed every example'))
                    continue
                objective = objective.subset(keep)

            result = _outer_step(plan, model, objective, state, epoch, batch_index)
        except NumericError as e:
            raise e.with_context(epoch=epoch, batch=batch_index) from e
        model, state = result.model, result.state
        stats.adjusted_count += result.adjusted_count
        stats.skipped_batches += int(result.skipped)
        stats.events.extend(result.events)

    if drops:
        stats.events.append(_event('ablation_drop', epoch, None, batches=drops, dropped=stats.dropped_count,
                                   kept=stats.kept_count))
    stats.mean_adv_loss = loss_sum / seen if seen else 0.0
    return model, state, stats


def _base_only(plan: TrainingPlan):
    """The MLCAT config with no adjustment, for plain AT and TRADES runs."""
    base = plan.base
    return MlcatConfig(l_min=0.0, strategy=Strategy.IDENTITY, base=base, trades_beta=plan.mlcat.trades_beta,
                       trades_gate=plan.mlcat.trades_gate)


def default_l_min(class_count):
    """1.5 for 10-class tasks, 4.0 for 100-class tasks; other counts scale with log(C)."""
    if class_count == 10:
        return 1.5
    if class_count == 100:
        return 4.0
    return round(1.5 * np.log(class_count) / np.log(10), 4)
