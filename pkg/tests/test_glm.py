import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize
from scipy.special import expit, logit

from frontdoor.errors import AllZeroWeights, DegenerateOutcome, DimensionMismatch, SeparationDetected
from frontdoor.glm import (
    DesignSpec,
    LogisticFit,
    fit_linear,
    fit_logistic,
    predict_linear,
    predict_logistic,
)

EMPTY2 = np.empty((2, 0))


def test_linear_closed_forms():
    assert fit_linear(EMPTY2, [1, 3], weights=[1, 3]).coefficients[0] == pytest.approx(2.5)
    x = np.array([0.0, 1.0, 2.0, 3.0])
    np.testing.assert_allclose(fit_linear(x, 2 * x).coefficients, [0, 2], atol=1e-12)
    assert fit_linear(EMPTY2, [2, 4], offset=[1, 1]).coefficients[0] == pytest.approx(2.0)


def test_linear_errors():
    with pytest.raises(DimensionMismatch):
        fit_linear(np.zeros((3, 1)), [1, 2])
    with pytest.raises(AllZeroWeights):
        fit_linear(EMPTY2, [1, 2], weights=[0, 0])


def test_linear_rank_deficient_uses_ridge():
    x = np.column_stack([np.arange(5.0), np.arange(5.0)])
    fit = fit_linear(x, np.arange(5.0))
    np.testing.assert_allclose(predict_linear(fit, x), np.arange(5.0), atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(5, 60), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_linear_weighted_normal_equations(n, k, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, k))
    y = rng.normal(size=n)
    w = rng.uniform(0.1, 3.0, n)
    off = rng.normal(size=n)
    fit = fit_linear(x, y, weights=w, offset=off)
    X = np.column_stack([np.ones(n), x])
    score = X.T @ (w * (y - off - X @ fit.coefficients))
    assert np.max(np.abs(score)) <= 1e-8 * max(1.0, np.max(np.abs(X.T @ (w * y))))


def test_logistic_examples():
    y = np.array([1, 1, 1, 0, 0, 0, 0, 0, 0, 0], dtype=float)
    fit = fit_logistic(np.empty((10, 0)), y)
    assert fit.coefficients[0] == pytest.approx(logit(0.3), abs=1e-10)
    assert fit.coefficients[0] == pytest.approx(-0.8473, abs=1e-4)
    np.testing.assert_allclose(predict_logistic(fit, np.empty((3, 0))), 0.3, atol=1e-12)
    sym = fit_logistic(np.array([-1, -1, 1, 1.0]), np.array([0, 1, 0, 1.0]), intercept=False)
    assert abs(sym.coefficients[0]) < 1e-12
    with pytest.raises(SeparationDetected):
        fit_logistic(np.array([-2, -1, 1, 2.0]), np.array([0, 0, 1, 1.0]))


def test_logistic_degenerate_outcome():
    with pytest.raises(DegenerateOutcome):
        fit_logistic(np.ones((4, 1)), np.ones(4))
    # a varying offset carries information even when y is constant
    fit = fit_logistic(np.array([1.0, -1.0, 1.0]), np.ones(3), offset=np.array([0.0, 1.0, 2.0]), intercept=False)
    assert np.isfinite(fit.coefficients[0])


def test_predict_logistic_clipping_and_zero_coefficients():
    fit = LogisticFit(coefficients=np.zeros(2), intercept=True, converged=True, iterations=0)
    np.testing.assert_array_equal(predict_logistic(fit, np.zeros((3, 1))), 0.5)
    big = LogisticFit(coefficients=np.array([50.0]), intercept=False, converged=True, iterations=0)
    assert predict_logistic(big, np.ones((1, 1)))[0] == pytest.approx(1 - 1e-3)
    with pytest.raises(DimensionMismatch):
        predict_logistic(fit, np.zeros((3, 2)))


@settings(max_examples=30, deadline=None)
@given(st.integers(20, 150), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_logistic_matches_direct_likelihood_maximization(n, k, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, k))
    off = rng.normal(scale=0.5, size=n)
    w = rng.uniform(0.2, 2.0, n)
    y = (rng.uniform(size=n) < expit(0.3 + x @ rng.normal(scale=0.7, size=k) + off)).astype(float)
    if np.ptp(y) == 0:
        return
    try:
        fit = fit_logistic(x, y, weights=w, offset=off)
    except SeparationDetected:
        return
    X = np.column_stack([np.ones(n), x])

    def nll(b):
        eta = off + X @ b
        return np.sum(w * (np.logaddexp(0, eta) - y * eta))

    ref = minimize(nll, np.zeros(k + 1), method="BFGS", options={"gtol": 1e-10})
    assert nll(fit.coefficients) <= ref.fun + 1e-8
    score = X.T @ (w * (y - expit(off + X @ fit.coefficients)))
    assert fit.converged and np.max(np.abs(score)) <= 1e-8
    dev = np.array(fit.deviance_history)
    assert np.all(np.diff(dev) <= 1e-9 * dev[:-1])


def test_integer_weights_equal_duplicated_rows():
    rng = np.random.default_rng(3)
    n = 40
    x = rng.normal(size=(n, 2))
    y = (rng.uniform(size=n) < expit(x[:, 0] - 0.5 * x[:, 1])).astype(float)
    w = rng.integers(1, 4, n)
    rep = np.repeat(np.arange(n), w)
    a = fit_logistic(x, y, weights=w.astype(float))
    b = fit_logistic(x[rep], y[rep])
    np.testing.assert_allclose(a.coefficients, b.coefficients, atol=1e-8)
    yy = x[:, 0] + rng.normal(size=n)
    c = fit_linear(x, yy, weights=w.astype(float))
    d = fit_linear(x[rep], yy[rep])
    np.testing.assert_allclose(c.coefficients, d.coefficients, atol=1e-8)


def test_design_spec_interactions():
    z = np.array([[1.0, 2.0, 0.0], [3.0, 4.0, 1.0]])
    spec = DesignSpec.for_inputs(z, "interactions")
    assert spec.square_cols == (0, 1)
    built = spec.build(z)
    assert built.shape[1] == spec.n_columns == 3 + 3 + 2
    np.testing.assert_array_equal(built[1], [3, 4, 1, 12, 3, 4, 9, 16])
    assert DesignSpec.for_inputs(z, "intercept").build(z).shape == (2, 0)
    with pytest.raises(DimensionMismatch):
        spec.build(np.zeros((2, 2)))
