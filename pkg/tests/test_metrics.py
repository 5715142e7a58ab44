from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smoothadv import metrics
from smoothadv.data import Dataset, LabeledExample, RhythmClass, Signal

N, AF, OT, NO = RhythmClass


class LookupModel:
    """Predicts a fixed class per example id, keyed by the first sample."""

    input_length = 16

    def __init__(self, preds):
        self.preds = preds

    def predict_batch(self, x):
        k = np.array([self.preds[int(row[0])] for row in x])
        return k, np.ones(len(k))


def dataset_of(labels):
    return Dataset(
        tuple(LabeledExample(Signal(np.full(16, float(i))), lab, f"e{i}") for i, lab in enumerate(labels))
    )


def test_perfect_predictor_diagonal():
    labels = [N, AF, OT, NO, N, AF]
    cm = metrics.confusion(LookupModel([c.index for c in labels]), dataset_of(labels))
    np.testing.assert_array_equal(cm, np.diag([2, 2, 1, 1]))


def test_constant_predictor_single_column():
    labels = [N, AF, OT, NO, OT]
    cm = metrics.confusion(LookupModel([0] * 5), dataset_of(labels))
    assert cm[:, 1:].sum() == 0
    np.testing.assert_array_equal(cm[:, 0], [1, 1, 2, 1])


def test_hand_fixture():
    labels = [N, N, AF, AF, OT, NO]
    preds = [N, AF, AF, AF, N, NO]
    cm = metrics.confusion(LookupModel([p.index for p in preds]), dataset_of(labels))
    expected = np.array([
        [1, 1, 0, 0],
        [0, 2, 0, 0],
        [1, 0, 0, 0],
        [0, 0, 0, 1],
    ])
    np.testing.assert_array_equal(cm, expected)
    assert metrics.accuracy(cm) == 4 / 6
    f1 = metrics.f1_scores(cm)
    # Normal: tp 1, predicted 2, actual 2 -> 0.5; AF: tp 2, predicted 3, actual 2 -> 0.8
    assert f1.per_class[N] == 0.5
    assert f1.per_class[AF] == 0.8
    assert f1.per_class[OT] == 0.0 and OT not in f1.degenerate
    assert f1.per_class[NO] == 1.0
    assert f1.mean == pytest.approx((0.5 + 0.8 + 0.0) / 3, abs=0)


def test_f1_diagonal():
    f1 = metrics.f1_scores(np.diag([3, 1, 2, 5]))
    assert all(v == 1.0 for v in f1.per_class.values())
    assert f1.mean == 1.0 and not f1.degenerate


def test_f1_degenerate_class_flagged():
    cm = np.zeros((4, 4), dtype=int)
    cm[0, 0] = cm[1, 1] = 2
    cm[0, 1] = cm[1, 0] = 1
    f1 = metrics.f1_scores(cm)
    assert f1.per_class[N] == pytest.approx(2 / 3, abs=1e-15)
    assert f1.per_class[AF] == pytest.approx(2 / 3, abs=1e-15)
    assert f1.per_class[OT] == 0.0 and f1.per_class[NO] == 0.0
    assert f1.degenerate == [OT, NO]


def f1_direct(cm, i):
    tp = cm[i, i]
    prec = tp / cm[:, i].sum() if cm[:, i].sum() else 0.0
    rec = tp / cm[i, :].sum() if cm[i, :].sum() else 0.0
    return 2 * prec * rec / (prec + rec) if prec + rec else 0.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=60), st.randoms())
def test_f1_properties(pairs, rnd):
    y, p = map(np.array, zip(*pairs))
    cm = metrics.confusion_from_labels(y, p)
    assert cm.sum() == len(pairs)
    assert metrics.accuracy(cm) == np.trace(cm) / cm.sum()
    order = list(range(len(pairs)))
    rnd.shuffle(order)
    cm2 = metrics.confusion_from_labels(y[order], p[order])
    f1a, f1b = metrics.f1_scores(cm), metrics.f1_scores(cm2)
    assert f1a.per_class == f1b.per_class
    for c in RhythmClass:
        assert f1a.per_class[c] == pytest.approx(f1_direct(cm, c.index), abs=1e-12)
        assert 0.0 <= f1a.per_class[c] <= 1.0


def result(label, before, after, success):
    return SimpleNamespace(label=label, pred_before=(before, 1.0), pred_after=(after, 1.0), success=success,
                           eligible=before is label, perturbation=np.zeros(4))


def test_success_rate_all_flipped():
    rs = [result(N, N, AF, True), result(OT, OT, N, True)]
    assert metrics.success_rate(rs).rate == 1.0


def test_success_rate_none_eligible():
    rs = [result(N, AF, AF, True), result(OT, N, N, True)]
    sr = metrics.success_rate(rs)
    assert sr.n_eligible == 0 and sr.rate is None


def test_success_rate_three_of_four():
    rs = [result(N, N, AF, True), result(AF, AF, N, True), result(OT, OT, OT, False), result(NO, NO, N, True),
          result(N, OT, AF, True)]
    sr = metrics.success_rate(rs)
    assert (sr.n_eligible, sr.n_success, sr.rate) == (4, 3, 0.75)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3), st.booleans()), max_size=40))
def test_success_rate_brute_force(rows):
    rs = [result(RhythmClass.from_index(a), RhythmClass.from_index(b), N, s) for a, b, s in rows]
    eligible = [r for r in rs if r.pred_before[0] is r.label]
    sr = metrics.success_rate(rs)
    assert sr.n_eligible == len(eligible)
    assert sr.n_success == sum(1 for r in eligible if r.success)


def test_smoothness_zero():
    stats = metrics.smoothness_stats([np.zeros(20), np.zeros(20)])
    assert all(v == 0.0 for v in stats["max_second_diff"].values())
    assert all(v == 0.0 for v in stats["total_variation"].values())


def test_smoothness_step():
    h = 2.5
    step = np.concatenate([np.zeros(10), np.full(10, h)])
    assert metrics.max_abs_second_difference(step) == h
    assert metrics.total_variation(step) == h


def test_smoothness_ramp():
    ramp = np.linspace(-3, 7, 30)
    assert metrics.max_abs_second_difference(ramp) < 1e-12


def test_smoothness_empty():
    assert metrics.smoothness_stats([])["n"] == 0


def test_report_render_and_dict():
    cm = np.diag([1, 1, 1, 0])
    rep = metrics.MetricsReport(cm, metrics.accuracy(cm), metrics.f1_scores(cm))
    d = rep.to_dict()
    assert d["accuracy"] == 1.0 and d["f1_degenerate"] == ["Noise"]
    text = rep.render()
    assert "Normal" in text and "(absent)" in text
