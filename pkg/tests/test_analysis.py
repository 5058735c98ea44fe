import math

import numpy as np
import pytest

from core.analysis import (DEFAULT_EDGES, LossTraceStore, aggregate_reports, check_edges, evaluate,
                           evaluate_per_example, histogram_losses, loss_histogram, overfit_report, trace_logger)
from core.attacks import Norm, ThreatModel
from core.data_io import Dataset
from core.errors import ConsistencyError, InputError
from core.nn import MlpModel, init_mlp
from core.trainer import AblationMode, AblationSpec, ablation_filter

LOSSES = [0.1, 0.5, 0.49, 1.0, 1.7, 2.5, 4.0, 10.0, 0.0, 1.5]


@pytest.fixture
def separable():
    """x0 equals the label, so the steep linear model below fits it with near-zero loss."""
    y = np.arange(20) % 2
    x = np.column_stack([y.astype(np.float64), np.full(20, 0.5)])
    model = MlpModel((np.array([[-100.0, 0.0], [100.0, 0.0]]),), (np.array([50.0, -50.0]),))
    return Dataset(x, y, np.arange(20), 'separable', 2), model


@pytest.fixture
def random_task():
    rng = np.random.default_rng(0)
    ds = Dataset(rng.uniform(size=(2000, 20)), np.arange(2000) % 10, np.arange(2000), 'random', 10)
    return ds, init_mlp([20, 16, 10], rng)


def test_histogram_counts_half_open_bins():
    histogram = histogram_losses(LOSSES, DEFAULT_EDGES, epoch=4)
    assert histogram.counts.tolist() == [3, 1, 1, 2, 1, 1, 1]
    assert histogram.total == len(LOSSES)
    assert histogram.epoch == 4


def test_single_bin_holds_everything():
    assert histogram_losses(LOSSES, (0.0, math.inf)).counts.tolist() == [10]


def test_histogram_refinement_conserves_mass():
    coarse = histogram_losses(LOSSES, (0.0, 1.0, math.inf))
    fine = histogram_losses(LOSSES, DEFAULT_EDGES)
    assert coarse.counts.tolist() == [fine.counts[:2].sum(), fine.counts[2:].sum()]


def test_histogram_frame_columns():
    frame = histogram_losses(LOSSES, (0.0, 1.0, math.inf), epoch=2).to_frame()
    assert list(frame.columns) == ['epoch', 'edge_lo', 'edge_hi', 'count']
    assert frame['count'].tolist() == [4, 6]
    assert frame['epoch'].tolist() == [2, 2]


@pytest.mark.parametrize('edges', [(0.5, math.inf), (0.0, 1.0), (0.0, 2.0, 1.0, math.inf), (0.0,)])
def test_check_edges_rejects_bad_edges(edges):
    with pytest.raises(InputError):
        check_edges(edges)


def test_loss_histogram_without_attack_on_fitted_model(separable):
    ds, model = separable
    histogram = loss_histogram(model, ds, ThreatModel(Norm.LINF, 0.0, 0.0, 0), DEFAULT_EDGES)
    assert histogram.counts[0] == len(ds)
    assert histogram.total == len(ds)


def test_loss_histogram_single_bin_with_attack(separable):
    ds, model = separable
    histogram = loss_histogram(model, ds, ThreatModel(Norm.LINF, 0.1, 0.05, 3), (0.0, math.inf), batch_size=7)
    assert histogram.counts.tolist() == [len(ds)]


def test_evaluate_without_attack_gives_equal_accuracies(random_task):
    ds, model = random_task
    natural, robust = evaluate(model, ds, ThreatModel(Norm.LINF, 0.0, 0.0, 0))
    assert natural == robust


def test_evaluate_random_model_is_at_chance(random_task):
    ds, model = random_task
    natural, robust = evaluate(model, ds, ThreatModel(Norm.LINF, 8 / 255, 2 / 255, 5))
    assert 0.07 <= natural <= 0.13
    assert 0.0 <= robust <= natural + 0.02


def test_evaluate_fitted_model(separable):
    ds, model = separable
    natural, robust = evaluate(model, ds, ThreatModel(Norm.L2, 0.1, 0.05, 3))
    assert natural == 1.0
    assert robust == 1.0
    correct, _ = evaluate_per_example(model, ds, ThreatModel(Norm.L2, 0.1, 0.05, 3), batch_size=3)
    assert correct.all()


def test_overfit_report_table_values():
    report = overfit_report([(0, 80.0, 50.0), (1, 82.0, 52.29), (2, 86.0, 44.43)])
    assert report.best == 52.29
    assert report.last == 44.43
    assert report.diff == -7.86
    assert report.best_epoch == 1
    assert report.natural_best == 86.0
    assert report.natural_diff == 0.0


def test_overfit_report_monotone_series_has_no_gap():
    report = overfit_report([10.0, 20.0, 30.0])
    assert report.diff == 0.0
    assert report.best_epoch == 2
    assert report.natural_best is None


def test_overfit_report_constant_and_tied_series():
    constant = overfit_report([5.0, 5.0, 5.0])
    assert constant.best == constant.last
    assert constant.diff == 0.0
    assert constant.best_epoch == 0
    assert overfit_report([1.0, 3.0, 3.0, 2.0]).best_epoch == 1


def test_overfit_report_rejects_empty_series():
    with pytest.raises(InputError):
        overfit_report([])


def test_aggregate_reports():
    reports = [overfit_report([(0, 80.0, 50.0), (1, 81.0, 48.0)]),
               overfit_report([(0, 82.0, 52.0), (1, 83.0, 47.0)])]
    frame = aggregate_reports(reports)
    row = frame.iloc[0]
    assert row['attack'] == 'PGD-20'
    assert row['runs'] == 2
    assert row['best_mean'] == pytest.approx(51.0)
    assert row['best_std'] == pytest.approx(math.sqrt(2))
    assert row['diff_mean'] == pytest.approx(-3.5)


def test_trace_store_records_and_rejects_duplicates():
    store = LossTraceStore()
    trace_logger(store, 0, [3, 1], [0.5, 0.7])
    assert len(store) == 2
    assert store.epoch_losses(0, [1, 3]).tolist() == [0.7, 0.5]
    with pytest.raises(ConsistencyError):
        store.record(0, [1], [0.2])
    with pytest.raises(ConsistencyError):
        store.record(1, [1, 2], [0.2])
    with pytest.raises(ConsistencyError):
        store.epoch_losses(5, [1])


def test_trace_store_snapshot_holds_the_epoch_before_the_milestone():
    store = LossTraceStore()
    for epoch in (98, 99, 100):
        store.record(epoch, [0, 1], [epoch + 0.1, epoch + 0.2])
    assert store.snapshot_losses(100, [1, 0]).tolist() == pytest.approx([99.2, 99.1])
    with pytest.raises(ConsistencyError):
        store.take_snapshot(50)


def test_trace_store_replay_reproduces_ablation_split():
    rng = np.random.default_rng(1)
    ids = np.arange(30)
    store = LossTraceStore()
    store.record(0, ids, rng.uniform(0, 3, 30))
    store.record(1, ids, rng.uniform(0, 3, 30))
    replayed = LossTraceStore.from_frame(store.to_frame())
    current = rng.uniform(0, 3, 30)
    for mode in (AblationMode.DROP_SMALL_ORIGINAL, AblationMode.DROP_SMALL_TRANSFORMED):
        spec = AblationSpec(mode, 0.0, 1.5)
        live = ablation_filter(current, ids, store, spec, epoch=1, milestones=(1,))
        again = ablation_filter(current, ids, replayed, spec, epoch=1, milestones=(1,))
        assert np.array_equal(live, again)
