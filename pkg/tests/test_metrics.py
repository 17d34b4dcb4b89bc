import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from scsl.exceptions import ConfigError, ShapeMismatch
from scsl.metrics import compute_metrics, default_thresholds


def test_default_grid():
    th = default_thresholds()
    assert th.size == 50 and th[0] == pytest.approx(1e-4) and th[-1] == pytest.approx(0.5)
    assert np.all(np.diff(th) > 0)
    assert np.allclose(np.diff(np.log(th)), np.log(th[1] / th[0]))


def test_perfect_separation():
    truth = np.array([[1, 0, 0], [0, 1, 1]], bool)
    m = compute_metrics(np.where(truth, 0.0, 1.0), truth)
    assert np.all(m.tpr == 1) and np.all(m.fpr == 0) and m.f1_at_threshold == 1.0


def test_no_rejections():
    truth = np.array([[1, 0], [0, 1]], bool)
    m = compute_metrics(np.ones((2, 2)), truth)
    assert np.all(m.tpr == 0) and np.all(m.fpr == 0) and m.f1_at_threshold == 0.0


def test_half_and_half():
    truth = np.array([[1, 1, 0, 0]], bool)
    p = np.array([[0.01, 0.9, 0.05, 0.7]])
    m = compute_metrics(p, truth)
    assert (m.precision, m.recall, m.f1_at_threshold) == (0.5, 0.5, 0.5)


def test_errors():
    with pytest.raises(ShapeMismatch):
        compute_metrics(np.ones((2, 2)), np.ones((2, 3), bool))
    with pytest.raises(ConfigError):
        compute_metrics(np.ones((1, 1)), np.ones((1, 1), bool), thresholds=[0.1, 0.05])


def test_nan_entries_ignored():
    truth = np.array([[1, 0]], bool)
    m = compute_metrics(np.array([[np.nan, 0.01]]), truth)
    assert m.n_true == 0 and m.n_null == 1 and m.fpr[-1] == 1.0
    assert m.fpr_ratio[-1] == pytest.approx(1 / 0.5)


def _oracle(p, truth, thresholds, cut=0.1):
    tpr, fpr = [], []
    pos = [(i, j) for i in range(p.shape[0]) for j in range(p.shape[1]) if truth[i, j]]
    neg = [(i, j) for i in range(p.shape[0]) for j in range(p.shape[1]) if not truth[i, j]]
    for t in thresholds:
        tpr.append(sum(p[e] <= t for e in pos) / len(pos) if pos else 0.0)
        fpr.append(sum(p[e] <= t for e in neg) / len(neg) if neg else 0.0)
    tp = sum(p[e] <= cut for e in pos)
    fp = sum(p[e] <= cut for e in neg)
    fn = len(pos) - tp
    f1 = 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else 0.0
    return tpr, fpr, f1


@settings(max_examples=200, deadline=None)
@given(st.tuples(st.integers(1, 6), st.integers(1, 6)).flatmap(
    lambda s: st.tuples(hnp.arrays(np.float64, s, elements=st.floats(0, 1)),
                        hnp.arrays(np.bool_, s))))
def test_against_confusion_oracle(pair):
    p, truth = pair
    th = default_thresholds()
    m = compute_metrics(p, truth, th)
    tpr, fpr, f1 = _oracle(p, truth, th)
    np.testing.assert_allclose(m.tpr, tpr)
    np.testing.assert_allclose(m.fpr, fpr)
    assert m.f1_at_threshold == pytest.approx(f1)
    assert np.all((0 <= m.tpr) & (m.tpr <= 1)) and np.all((0 <= m.fpr) & (m.fpr <= 1))
    np.testing.assert_allclose(m.fpr_ratio, m.fpr / th)
