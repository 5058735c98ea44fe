"""
Diagnostics for robust overfitting.

- loss-range histograms of the adversarial training loss;
- natural and robust accuracy under a PGD-K attack;
- best / last / diff reports over an accuracy series;
- the per-example loss trace that the original/transformed ablation split reads.
"""
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from core.attacks import pgd_attack
from core.errors import ConsistencyError, InputError
from core.nn import cross_entropy, forward

DEFAULT_EDGES = (0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 5.0, math.inf)


@dataclass(frozen=True, eq=False)
class LossHistogram:
    bin_edges: tuple
    counts: np.ndarray
    epoch: int

    @property
    def total(self):
        return int(self.counts.sum())

    def to_frame(self):
        return pd.DataFrame({
            'epoch': self.epoch,
            'edge_lo': list(self.bin_edges[:-1]),
            'edge_hi': list(self.bin_edges[1:]),
            'count': self.counts.astype(int),
        })


def check_edges(edges):
    edges = tuple(float(e) for e in edges)
    if len(edges) < 2:
        raise InputError("Histogram needs at least two edges.")
    if any(b <= a for a, b in zip(edges[:-1], edges[1:])):
        raise InputError(f"Histogram edges must be strictly ascending, got {list(edges)}.")
    if edges[0] != 0.0 or edges[-1] != math.inf:
        raise InputError(f"Histogram edges must run from 0 to Infinity, got {list(edges)}.")
    return edges


def histogram_losses(losses, edges=DEFAULT_EDGES, epoch=0) -> LossHistogram:
    """Counts losses per half-open bin [e_k, e_k+1)."""
    edges = check_edges(edges)
    losses = np.asarray(losses, dtype=np.float64)
    index = np.searchsorted(np.asarray(edges), losses, side='right') - 1
    counts = np.bincount(index, minlength=len(edges) - 1)
    return LossHistogram(edges, counts, epoch)


def adversarial_losses(model, ds, tm, *, epoch=0, seed=0, stream='histogram', batch_size=512):
    """Per-example CE on freshly generated adversarial examples, in dataset order."""
    out = np.empty(len(ds))
    for start in range(0, len(ds), batch_size):
        part = slice(start, start + batch_size)
        x_adv = pgd_attack(model, ds.x[part], ds.y[part], tm, seed=seed, epoch=epoch, ids=ds.ids[part],
                           stream=stream)
        out[part] = cross_entropy(forward(model, x_adv), ds.y[part])
    return out


def loss_histogram(model, ds, tm, bin_edges=DEFAULT_EDGES, *, epoch=0, seed=0, batch_size=512) -> LossHistogram:
    """Histogram of training-attack losses over the whole dataset."""
    edges = check_edges(bin_edges)
    losses = adversarial_losses(model, ds, tm, epoch=epoch, seed=seed, batch_size=batch_size)
    return histogram_losses(losses, edges, epoch)


def evaluate_per_example(model, ds, tm_eval, *, seed=0, epoch=0, batch_size=512):
    """(natural_correct, robust_correct) boolean arrays in dataset order."""
    natural = np.empty(len(ds), dtype=bool)
    robust = np.empty(len(ds), dtype=bool)
    for start in range(0, len(ds), batch_size):
        part = slice(start, start + batch_size)
        x, y = ds.x[part], ds.y[part]
        natural[part] = np.argmax(forward(model, x), axis=1) == y
        x_adv = pgd_attack(model, x, y, tm_eval, seed=seed, epoch=epoch, ids=ds.ids[part], stream='eval')
        robust[part] = np.argmax(forward(model, x_adv), axis=1) == y
    return natural, robust


def evaluate(model, ds, tm_eval, *, seed=0, epoch=0, batch_size=512):
    """Returns (natural_acc, robust_acc) as fractions in [0, 1]."""
    natural, robust = evaluate_per_example(model, ds, tm_eval, seed=seed, epoch=epoch, batch_size=batch_size)
    return float(natural.mean()), float(robust.mean())


@dataclass(frozen=True)
class RobustnessReport:
    attack: str
    points: tuple
    best_epoch: int
    best: float
    last: float
    diff: float
    natural_best: float = None
    natural_last: float = None
    natural_diff: float = None

    def to_dict(self):
        return {
            'attack': self.attack,
            'best_epoch': self.best_epoch,
            'best': self.best,
            'last': self.last,
            'diff': self.diff,
            'natural_best': self.natural_best,
            'natural_last': self.natural_last,
            'natural_diff': self.natural_diff,
        }


def _best_last_diff(values):
    best_index = int(np.argmax(values))
    best = values[best_index]
    last = values[-1]
    return best_index, best, last, round(last - best, 12)


def overfit_report(series, attack='PGD-20') -> RobustnessReport:
    """
    `series` holds (epoch, natural, robust) tuples or bare robust values (epoch = position).
    Best is the maximum robust value, ties going to the earliest epoch.
    """
    points = []
    for position, item in enumerate(series):
        if isinstance(item, (tuple, list)):
            epoch, natural, robust = item
            points.append((int(epoch), None if natural is None else float(natural), float(robust)))
        else:
            points.append((position, None, float(item)))
    if not points:
        raise InputError(f"Cannot build a {attack} report from an empty series.")

    robust = [p[2] for p in points]
    best_index, best, last, diff = _best_last_diff(robust)
    report = dict(attack=attack, points=tuple(points), best_epoch=points[best_index][0],
                  best=best, last=last, diff=diff)
    if all(p[1] is not None for p in points):
        _, natural_best, natural_last, natural_diff = _best_last_diff([p[1] for p in points])
        report.update(natural_best=natural_best, natural_last=natural_last, natural_diff=natural_diff)
    return RobustnessReport(**report)


def aggregate_reports(reports):
    """Mean and standard deviation of best/last/diff per attack over several runs (one report per run)."""
    frame = pd.DataFrame([r.to_dict() for r in reports])
    if frame.empty:
        raise InputError("No reports to aggregate.")
    columns = ['best', 'last', 'diff', 'natural_best', 'natural_last', 'natural_diff']
    grouped = frame.groupby('attack')[columns].agg(['mean', 'std'])
    grouped.columns = [f"{name}_{stat}" for name, stat in grouped.columns]
    grouped.insert(0, 'runs', frame.groupby('attack').size())
    return grouped.reset_index()


@dataclass
class LossTraceStore:
    """
    Append-only per-example loss history: records[epoch][id] = loss.
    snapshots[milestone] holds the losses recorded during epoch milestone - 1.
    """
    records: dict = field(default_factory=dict)
    snapshots: dict = field(default_factory=dict)

    def record(self, epoch, ids, losses):
        ids = np.asarray(ids)
        losses = np.asarray(losses, dtype=np.float64)
        if ids.shape != losses.shape:
            raise ConsistencyError(f"{ids.shape[0]} ids but {losses.shape[0]} losses for epoch {epoch}.")
        bucket = self.records.setdefault(int(epoch), {})
        for example_id, loss in zip(ids.tolist(), losses.tolist()):
            if example_id in bucket:
                raise ConsistencyError(f"Loss for example {example_id} in epoch {epoch} is already recorded.")
            bucket[example_id] = loss

    def epoch_losses(self, epoch, ids):
        bucket = self.records.get(int(epoch))
        if bucket is None:
            raise ConsistencyError(f"No losses recorded for epoch {epoch}.")
        try:
            return np.array([bucket[i] for i in np.asarray(ids).tolist()], dtype=np.float64)
        except KeyError as e:
            raise ConsistencyError(f"Example {e.args[0]} has no loss recorded in epoch {epoch}.") from e

    def take_snapshot(self, milestone):
        if milestone - 1 not in self.records:
            raise ConsistencyError(f"Cannot snapshot milestone {milestone}: epoch {milestone - 1} was not recorded.")
        self.snapshots[int(milestone)] = dict(self.records[milestone - 1])
        return self.snapshots[int(milestone)]

    def snapshot_losses(self, milestone, ids):
        snapshot = self.snapshots.get(int(milestone))
        if snapshot is None:
            snapshot = self.take_snapshot(milestone)
        try:
            return np.array([snapshot[i] for i in np.asarray(ids).tolist()], dtype=np.float64)
        except KeyError as e:
            raise ConsistencyError(f"Example {e.args[0]} is missing from the milestone {milestone} snapshot.") from e

    def __len__(self):
        return sum(len(bucket) for bucket in self.records.values())

    def to_frame(self):
        rows = [(epoch, example_id, loss)
                for epoch in sorted(self.records)
                for example_id, loss in sorted(self.records[epoch].items())]
        return pd.DataFrame(rows, columns=['epoch', 'id', 'loss'])

    @classmethod
    def from_frame(cls, frame):
        store = cls()
        for epoch, group in frame.groupby('epoch', sort=True):
            store.record(int(epoch), group['id'].to_numpy(), group['loss'].to_numpy())
        return store


def trace_logger(store: LossTraceStore, epoch, ids, losses):
    """Appends one batch of pre-adjustment losses to the store."""
    store.record(epoch, ids, losses)
    return store
