import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from hypothesis.extra import numpy as hnp
from scipy.stats import norm

from scsl.amortized import TrainConfig, train_x_model, train_y_model
from scsl.data import DataMatrix, Domain, RngHandle
from scsl.exceptions import DegenerateVariance, LengthMismatch, MaskShapeError
from scsl.gcm import EdgeEvaluator, gcm_pvalue, gcm_statistic, gcm_test, residual_products

from conftest import coin_data


def naive_statistic(r):
    """Single-pass textbook form: sqrt(n) mean / sqrt(mean(R^2) - mean(R)^2)."""
    n = len(r)
    s1 = sum(r)
    s2 = sum(v * v for v in r)
    return math.sqrt(n) * (s1 / n) / math.sqrt(s2 / n - (s1 / n) ** 2)


def test_residual_product_examples():
    assert np.all(residual_products([1, 0], [1, 0], [1, 0], [0.3, 0.2]) == 0)
    np.testing.assert_array_equal(residual_products([1, 0], [0.5, 0.5], [1, 0], [0.5, 0.5]), [0.25, 0.25])
    with pytest.raises(LengthMismatch):
        residual_products([1, 0], [1], [1, 0], [1, 0])
    with pytest.raises(LengthMismatch):
        residual_products([1], [1], [1], [1])


def test_statistic_examples():
    assert gcm_statistic([1, -1]) == 0.0
    assert gcm_statistic([1, 2, 3]) == pytest.approx(6 / math.sqrt(2), rel=1e-14)
    with pytest.raises(DegenerateVariance) as info:
        gcm_statistic([0.7, 0.7, 0.7])
    assert info.value.constant == pytest.approx(0.7)


def test_pvalue_examples():
    assert gcm_pvalue(0.0) == 1.0
    assert gcm_pvalue(1.959964) == pytest.approx(0.05, abs=1e-6)
    assert gcm_pvalue(-1.959964) == pytest.approx(0.05, abs=1e-6)


@given(st.floats(-30, 30))
def test_pvalue_matches_scipy(t):
    assert abs(gcm_pvalue(t) - 2 * norm.sf(abs(t))) <= 1e-12


@given(st.floats(0, 20), st.floats(0, 20))
def test_pvalue_monotone(a, b):
    lo, hi = sorted((a, b))
    assert gcm_pvalue(lo) >= gcm_pvalue(hi)


_vectors = hnp.arrays(np.float64, st.integers(3, 60), elements=st.floats(-10, 10))


@given(_vectors, st.floats(0.01, 100))
def test_scale_behaviour(r, c):
    assume(np.std(r) > 1e-3 * (np.abs(r).max() + 1e-12))
    t = gcm_statistic(r)
    assert gcm_statistic(c * r) == pytest.approx(t, rel=1e-9, abs=1e-9)
    assert gcm_statistic(-r) == pytest.approx(-t, rel=1e-12, abs=1e-12)
    assert gcm_pvalue(gcm_statistic(-r)) == pytest.approx(gcm_pvalue(t), rel=1e-12, abs=1e-15)


@given(hnp.arrays(np.float64, st.integers(3, 200), elements=st.floats(-5, 5)))
def test_against_single_pass_oracle(r):
    # well conditioned: the spread is not tiny relative to the mean
    assume(np.std(r) > 0.05 * (abs(np.mean(r)) + 1))
    assert gcm_statistic(r) == pytest.approx(naive_statistic(list(r)), rel=1e-12, abs=1e-12)


def test_wrong_subset_length(small_models):
    data, ys, xs = small_models
    with pytest.raises(MaskShapeError):
        gcm_test(data, 0, 0, [1, 0], ys[0], xs[0])


def test_perfect_fit_gives_p_one():
    # Y_0 is constant, so a zero-epoch model on the {0,1} scale cannot hit it,
    # but residuals of X against a copy are zero once the model is exact.
    n = 50
    x = np.tile([[1.0], [0.0]], (n // 2, 1))
    y = np.column_stack([x[:, 0], 1 - x[:, 0]])
    data = DataMatrix(x, y, Domain.BINARY)
    cfg = TrainConfig(n_epochs=0)
    ym = train_y_model(data, 0, cfg, RngHandle(0))
    xm = train_x_model(data, 0, cfg, RngHandle(0))
    ev = EdgeEvaluator(data, 0, 0, ym, xm)
    # force exact predictions: R == 0 everywhere
    ev._base_y = np.where(data.y_data[:, 0] == 1, 50.0, -50.0) * 1e3
    ev._A_y = np.zeros_like(ev._A_y)
    res = ev.hard([0.0])
    assert res.p_value == 1.0 and res.statistic == 0.0


def test_constant_nonzero_products_raise():
    data = DataMatrix(np.ones((10, 1)), np.ones((10, 2)), Domain.BINARY)
    cfg = TrainConfig(n_epochs=0)
    ev = EdgeEvaluator(data, 0, 0, train_y_model(data, 0, cfg), train_x_model(data, 0, cfg))
    # zero models predict 0.5 for all-one targets, so every product is 0.25
    with pytest.raises(DegenerateVariance):
        ev.hard([1.0])


def test_relaxed_matches_hard_at_integral_subsets(small_models):
    data, ys, xs = small_models
    ev = EdgeEvaluator(data, 1, 2, ys[2], xs[1])
    for code in range(8):
        s = np.array([(code >> i) & 1 for i in range(3)], float)
        t_soft, _ = ev.relaxed(s)
        assert abs(t_soft - ev.hard(s).statistic) <= 1e-12 * max(1, abs(t_soft))


def test_diagnostics(small_models):
    data, ys, xs = small_models
    res = gcm_test(data, 0, 1, [1, 0, 1], ys[1], xs[0])
    assert res.n_used == data.n and 0 < res.a_f < 1 and 0 < res.a_g < 1
    assert set(res.to_dict()) == {"statistic", "p_value", "n_used", "a_f", "a_g"}


def test_zero_models_null_calibration():
    # independent coins and zero-weight models: T is a plain normalized mean
    hits = 0
    cfg = TrainConfig(n_epochs=0)
    for rep in range(500):
        data = coin_data(400, 1, 2, seed=10_000 + rep)
        res = gcm_test(data, 0, 0, [1.0], train_y_model(data, 0, cfg), train_x_model(data, 0, cfg))
        hits += abs(res.statistic) > 1.96
    assert 0.03 <= hits / 500 <= 0.08
