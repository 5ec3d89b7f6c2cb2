import numpy as np
import pytest
from scipy.special import expit
from scipy.stats import norm

from frontdoor.data import Dataset
from frontdoor.density import (
    BayesRatio,
    CallableDensity,
    DensityKind,
    KernelDensity,
    NormalDensity,
    PluggedRatio,
    density_ratio_bayes,
    density_ratio_from,
    fit_cond_density,
    integrate_mediator,
    silverman,
    trapezoid_weights,
)
from frontdoor.errors import EmptyTreatmentArm, UnsupportedKind
from frontdoor.glm import DesignSpec, LogisticFit
from frontdoor.nuisance import fit_treatment_given_mediator, PropensityModel
from frontdoor.sim import get_dgp

from conftest import dataset


@pytest.fixture(scope="module")
def cont5000():
    return dataset("univ-continuous", 5000, 21)


@pytest.fixture(scope="module")
def kernel5000(cont5000):
    return fit_cond_density(cont5000, DensityKind.KERNEL)


def test_single_row_kernel_is_gaussian_peak():
    model = KernelDensity(np.array([0.7, -1.0]), np.array([1, 0]), np.array([[0.2], [0.9]]))
    h, _ = model.bandwidths(1)
    assert h == pytest.approx(1.06)  # one row: unit-spread fallback times 1.06
    assert model.eval(0.7, 1, np.array([[0.2]]))[0] == pytest.approx(1 / (h * np.sqrt(2 * np.pi)), rel=1e-12)


def test_silverman_rule():
    v = np.arange(10.0)
    assert silverman(v) == pytest.approx(1.06 * np.std(v, ddof=1) * 10 ** -0.2)
    assert silverman(np.ones(5)) == pytest.approx(1.06 * 5 ** -0.2)


def test_bernoulli_density_recovers_generating_expit():
    d = dataset("univ-binary", 5000, 22)
    model = fit_cond_density(d, DensityKind.BERNOULLI)
    x = np.linspace(0, 1, 21)[:, None]
    for a in (0, 1):
        p = model.eval(np.ones(21), np.full(21, a), x)
        assert np.max(np.abs(p - expit(-1 + a + x[:, 0]))) < 0.03
        np.testing.assert_array_equal(p + model.eval(np.zeros(21), np.full(21, a), x), 1.0)


def test_kernel_density_near_generating_normal(kernel5000):
    f = kernel5000.eval(2.0, 1, np.array([[0.5]]))[0]
    assert abs(f - norm.pdf(2.0, loc=2.5)) < 0.05


def test_from_density_ratio_matches_normal_ratio(kernel5000):
    r = density_ratio_from(kernel5000, 1).ratio(np.array([1.5]), np.array([0]), np.array([[0.5]]))[0]
    oracle = norm.pdf(1.5, loc=2.5) / norm.pdf(1.5, loc=1.5)
    assert abs(r / oracle - 1) < 0.10


def test_ratio_is_one_at_reference_level(kernel5000, cont5000, rng):
    pi = PropensityModel.fit_data(cont5000.x, cont5000.a, "main")
    lam = fit_treatment_given_mediator(cont5000, "main")
    m = rng.normal(2, 2, 50)
    x = rng.uniform(size=(50, 1))
    for a0 in (0, 1):
        for model in (density_ratio_from(kernel5000, a0), density_ratio_bayes(lam, pi.fit, a0)):
            np.testing.assert_array_equal(model.ratio(m, np.full(50, a0), x), 1.0)
            assert np.all(model.ratio(m, np.full(50, 1 - a0), x) > 0)


def test_bayes_ratio_with_uninformative_mediator_is_one():
    spec_x = DesignSpec(n_inputs=1)
    spec_xm = DesignSpec(n_inputs=2)
    pi = LogisticFit(np.array([-0.3, 0.8]), True, True, 1, spec_x)
    lam = LogisticFit(np.array([-0.3, 0.8, 0.0]), True, True, 1, spec_xm)
    x = np.linspace(0, 1, 7)[:, None]
    r = BayesRatio(lam, pi, 1).ratio(np.linspace(-3, 3, 7), np.zeros(7), x)
    np.testing.assert_allclose(r, 1.0, rtol=1e-14)


def test_bayes_ratio_bivariate_against_gaussian_ratio():
    d = dataset("bivariate", 5000, 23)
    pi = PropensityModel.fit_data(d.x, d.a, "main")
    lam = fit_treatment_given_mediator(d, "main")
    dgp = get_dgp("bivariate")
    other = d.a == 0
    est = density_ratio_bayes(lam, pi.fit, 1).ratio(d.m[other], d.a[other], d.x[other])
    truth = dgp.mediator_ratio(d.m[other], d.a[other], d.x[other], 1)
    assert np.median(np.abs(est / truth - 1)) < 0.15


def test_bayes_and_density_routes_agree(cont5000, kernel5000):
    pi = PropensityModel.fit_data(cont5000.x, cont5000.a, "main")
    lam = fit_treatment_given_mediator(cont5000, "main")
    other = cont5000.a == 0
    args = (cont5000.m[other], cont5000.a[other], cont5000.x[other])
    b = density_ratio_bayes(lam, pi.fit, 1).ratio(*args)
    k = density_ratio_from(kernel5000, 1).ratio(*args)
    assert np.median(np.abs(b / k - 1)) < 0.20


def test_kernel_density_integrates_to_one(kernel5000, rng):
    for _ in range(20):
        a0 = int(rng.integers(0, 2))
        x = rng.uniform(size=1)
        assert integrate_mediator(lambda m: np.ones_like(m), kernel5000, a0, x) == pytest.approx(1.0, abs=0.01)


def test_normal_density_moments():
    rng = np.random.default_rng(5)
    n = 4000
    a = rng.integers(0, 2, n)
    x = rng.uniform(size=(n, 1))
    m = rng.normal(size=n)
    model = NormalDensity(m, a, x)
    mean0 = float(model.mean(np.array([1]), np.array([[0.5]]))[0])
    assert integrate_mediator(lambda v: v, model, 1, [0.5]) == pytest.approx(mean0, abs=0.01)
    second = integrate_mediator(lambda v: v ** 2, model, 1, [0.5])
    assert second == pytest.approx(model.sigma ** 2 + mean0 ** 2, abs=1e-3)
    assert second == pytest.approx(1.0, abs=0.05)


def test_binary_integration_is_a_sum():
    model = CallableDensity(lambda m, a, x: np.where(m == 1, 0.25, 0.75), binary=True)
    assert integrate_mediator(lambda m: 10 * m + 1, model, 1, [0.3]) == pytest.approx(0.75 * 1 + 0.25 * 11)


def test_fit_errors():
    d = Dataset(x=[0.1, 0.2], a=[1, 1], m=[0.3, 0.4], y=[1, 2], mediator_kind="continuous")
    with pytest.raises(EmptyTreatmentArm):
        fit_cond_density(d, DensityKind.KERNEL)
    b = Dataset(x=[0.1, 0.2], a=[0, 1], m=[0, 1], y=[1, 2], mediator_kind="binary")
    with pytest.raises(UnsupportedKind):
        fit_cond_density(b, DensityKind.KERNEL)
    mv = Dataset(x=[0.1, 0.2], a=[0, 1], m=[[0, 1], [1, 2]], y=[1, 2], mediator_kind="multivariate")
    with pytest.raises(UnsupportedKind):
        fit_cond_density(mv, DensityKind.NORMAL)


def test_plugged_ratio_rows():
    d = Dataset(x=[0.1, 0.2, 0.3], a=[0, 1, 0], m=[0.3, 0.4, 0.1], y=[1, 2, 3], mediator_kind="continuous")
    r = PluggedRatio(np.array([2.0, 5.0, 0.5]), a0=1)
    np.testing.assert_array_equal(r.row_ratio(d), [2.0, 1.0, 0.5])
    with pytest.raises(UnsupportedKind):
        r.ratio(d.m, d.a, d.x)


def test_trapezoid_weights():
    pts = np.linspace(-1, 2, 31)
    w = trapezoid_weights(pts)
    assert w.sum() == pytest.approx(3.0)
    assert np.sum(w * pts) == pytest.approx(np.trapezoid(pts, pts))
