"""Fitting and per-row evaluation of the two nuisance parameterizations.

The density parameterization carries (mu, f_M, pi) and the empirical law of X;
the ratio parameterization replaces f_M by the sequential regressions
gamma, kappa_0, kappa_1 and a mediator density ratio.

Estimators never call the fitted models directly. They work on
:class:`DensityRows` / :class:`RatioRows`, which hold every nuisance value the
influence function and the targeting updates need, evaluated at the sample rows.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .data import Dataset, EstimatorConfig, MediatorKind, OutcomeKind
from .density import (
    BayesRatio,
    CondDensityModel,
    DensityKind,
    DensityRatioModel,
    PluggedRatio,
    RatioKind,
    density_ratio_from,
    fit_cond_density,
)
from .errors import InsufficientRowsInArm, UnsupportedKind, ValidationError
from .glm import DesignSpec, LinearFit, LogisticFit, fit_linear, fit_logistic

_ALIASES = {
    "main": "main",
    "main_terms": "main",
    "main-terms": "main",
    "interactions": "interactions",
    "with_pairwise_interactions": "interactions",
    "pairwise": "interactions",
    "intercept": "intercept",
}


def _terms(name: str) -> str:
    try:
        return _ALIASES[name]
    except KeyError:
        raise ValidationError(f"unknown learner {name!r}; expected one of {sorted(set(_ALIASES))}") from None


@dataclass(frozen=True)
class LearnerSpec:
    """Working-model terms for each nuisance regression.

    Each field is ``"intercept"``, ``"main"`` or ``"interactions"``. ``density``
    picks the continuous-mediator density estimator (``"kernel"`` or ``"normal"``).
    """

    outcome: str = "main"
    propensity: str = "main"
    mediator: str = "main"
    sequential: str = "main"
    treatment_given_mediator: str = "main"
    density: str = "kernel"

    @classmethod
    def from_name(cls, name: str = "main", density: str = "kernel") -> "LearnerSpec":
        t = _terms(name)
        return cls(t, t, t, t, t, density)

    def __post_init__(self):
        for f in ("outcome", "propensity", "mediator", "sequential", "treatment_given_mediator"):
            object.__setattr__(self, f, _terms(getattr(self, f)))
        if self.density not in ("kernel", "normal"):
            raise ValidationError(f"unknown density estimator {self.density!r}")


def _mz(m, a, x):
    m = np.asarray(m, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    m = m.reshape(n, -1)
    a = np.broadcast_to(np.asarray(a, dtype=float).reshape(-1), (n,))
    return np.column_stack([m, a, x])


class OutcomeModel:
    """E[Y | M, A, X]. Wraps a GLM fit, a constant, or a callable ``fn(m, a, x)``."""

    def __init__(self, fn: Callable, binary: bool, fit=None):
        self.fn = fn
        self.binary = binary
        self.fit = fit

    @classmethod
    def fit_data(cls, data: Dataset, terms: str, binary: bool, prob_clip: float = 1e-3) -> "OutcomeModel":
        y = data.y
        if np.ptp(y) == 0:
            c = float(y[0])
            return cls(lambda m, a, x, c=c: np.full(np.asarray(x).shape[0], c), binary)
        z = _mz(data.m, data.a, data.x)
        spec = DesignSpec.for_inputs(z, terms)
        if binary:
            fit = fit_logistic(spec.build(z), y, design_spec=spec)
            return cls(lambda m, a, x: fit.predict_inputs(_mz(m, a, x), prob_clip=prob_clip), True, fit)
        fit = fit_linear(spec.build(z), y, design_spec=spec)
        return cls(lambda m, a, x: fit.predict_inputs(_mz(m, a, x)), False, fit)

    def predict(self, m, a, x) -> np.ndarray:
        return np.asarray(self.fn(m, a, x), dtype=float)


class PropensityModel:
    """P(A = 1 | X), clipped to ``[prob_clip, 1 - prob_clip]``."""

    def __init__(self, fn: Callable, prob_clip: float = 1e-3, fit=None):
        self.fn = fn
        self.prob_clip = prob_clip
        self.fit = fit

    @classmethod
    def fit_data(cls, x, a, terms: str, prob_clip: float = 1e-3) -> "PropensityModel":
        spec = DesignSpec.for_inputs(x, terms)
        fit = fit_logistic(spec.build(x), a, design_spec=spec)
        return cls(lambda x: fit.predict_inputs(x, prob_clip=prob_clip), prob_clip, fit)

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        p = np.broadcast_to(np.asarray(self.fn(x), dtype=float), (x.shape[0],))
        return np.clip(p, self.prob_clip, 1.0 - self.prob_clip)


class CovariateRegression:
    """Regression of a pseudo-outcome on X (used for gamma and kappa_a)."""

    def __init__(self, fn: Callable, fit: Optional[LinearFit] = None):
        self.fn = fn
        self.fit = fit

    @classmethod
    def fit_rows(cls, x, target, terms: str) -> "CovariateRegression":
        spec = DesignSpec.for_inputs(x, terms)
        fit = fit_linear(spec.build(x), target, design_spec=spec)
        return cls(lambda x: fit.predict_inputs(x), fit)

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        return np.broadcast_to(np.asarray(self.fn(x), dtype=float), (x.shape[0],)).copy()


def xi_values(mu: OutcomeModel, pi: PropensityModel, m, x) -> np.ndarray:
    """xi(m, x) = mu(m, 0, x) pi(0|x) + mu(m, 1, x) pi(1|x)."""
    p1 = pi.predict(x)
    return mu.predict(m, 0, x) * (1.0 - p1) + mu.predict(m, 1, x) * p1


@dataclass(frozen=True)
class NuisanceSetDensity:
    mu: OutcomeModel
    pi: PropensityModel
    fm: CondDensityModel
    grid_size: int = 200


@dataclass(frozen=True)
class NuisanceSetRatio:
    mu: OutcomeModel
    pi: PropensityModel
    gamma: CovariateRegression
    kappa0: CovariateRegression
    kappa1: CovariateRegression
    fratio: DensityRatioModel
    a0: int
    sequential_terms: str = "main"
    lam: Optional[LogisticFit] = None


def fit_density_set(data: Dataset, cfg: EstimatorConfig, learner: LearnerSpec) -> NuisanceSetDensity:
    if data.mediator_kind is MediatorKind.MULTIVARIATE:
        raise UnsupportedKind("the density parameterization needs a univariate mediator")
    binary_y = cfg.outcome_kind is OutcomeKind.BINARY
    mu = OutcomeModel.fit_data(data, learner.outcome, binary_y, cfg.prob_clip)
    pi = PropensityModel.fit_data(data.x, data.a, learner.propensity, cfg.prob_clip)
    if data.mediator_kind is MediatorKind.BINARY:
        fm = fit_cond_density(data, DensityKind.BERNOULLI, terms=learner.mediator, prob_clip=cfg.prob_clip)
    else:
        fm = fit_cond_density(data, DensityKind(learner.density), terms=learner.mediator)
    return NuisanceSetDensity(mu, pi, fm, cfg.integration_grid_size)


def _arm_rows(data: Dataset, a0: int) -> np.ndarray:
    rows = np.flatnonzero(data.a == a0)
    if rows.size < 2:
        raise InsufficientRowsInArm(f"need at least 2 rows with A={a0} for sequential regression, found {rows.size}")
    return rows


def sequential_gamma(mu: OutcomeModel, pi: PropensityModel, data: Dataset, a0: int, terms: str = "main"):
    """Regress xi(M, X) on X among rows with A = a0; predictions are defined everywhere."""
    rows = _arm_rows(data, a0)
    target = xi_values(mu, pi, data.m[rows], data.x[rows])
    return CovariateRegression.fit_rows(data.x[rows], target, _terms(terms))


def sequential_kappa(mu: OutcomeModel, data: Dataset, a0: int, a: int, terms: str = "main"):
    """Regress mu(M, a, X) on X among rows with A = a0."""
    rows = _arm_rows(data, a0)
    target = mu.predict(data.m[rows], a, data.x[rows])
    return CovariateRegression.fit_rows(data.x[rows], target, _terms(terms))


def fit_treatment_given_mediator(data: Dataset, terms: str) -> LogisticFit:
    z = np.column_stack([data.x, data.m])
    spec = DesignSpec.for_inputs(z, terms)
    return fit_logistic(spec.build(z), data.a, design_spec=spec)


def fit_ratio_set(data: Dataset, cfg: EstimatorConfig, learner: LearnerSpec, ratio_kind,
                  plugged: Optional[np.ndarray] = None, base: Optional[tuple] = None) -> NuisanceSetRatio:
    """Fit the ratio parameterization for ``cfg.a0``.

    ``base`` may carry an already fitted ``(mu, pi, lam)`` triple so both
    treatment levels of an effect share the a0-free components.
    """
    ratio_kind = RatioKind(ratio_kind)
    a0 = cfg.a0
    binary_y = cfg.outcome_kind is OutcomeKind.BINARY
    if base is not None:
        mu, pi, lam = base
    else:
        mu = OutcomeModel.fit_data(data, learner.outcome, binary_y, cfg.prob_clip)
        pi = PropensityModel.fit_data(data.x, data.a, learner.propensity, cfg.prob_clip)
        lam = None
    gamma = sequential_gamma(mu, pi, data, a0, learner.sequential)
    kappa0 = sequential_kappa(mu, data, a0, 0, learner.sequential)
    kappa1 = sequential_kappa(mu, data, a0, 1, learner.sequential)
    if ratio_kind is RatioKind.BAYES:
        if lam is None:
            lam = fit_treatment_given_mediator(data, learner.treatment_given_mediator)
        fratio = BayesRatio(lam, pi.fit, a0, cfg.prob_clip) if pi.fit is not None else None
        if fratio is None:
            raise UnsupportedKind("Bayes-rule ratio needs a fitted propensity model")
    elif ratio_kind is RatioKind.FROM_DENSITY:
        if data.mediator_kind is MediatorKind.MULTIVARIATE:
            raise UnsupportedKind(
                "no density-ratio learner for multivariate mediators: supply --ratio-file or use tmle-2b")
        if data.mediator_kind is MediatorKind.BINARY:
            fm = fit_cond_density(data, DensityKind.BERNOULLI, terms=learner.mediator, prob_clip=cfg.prob_clip)
        else:
            fm = fit_cond_density(data, DensityKind(learner.density), terms=learner.mediator)
        fratio = density_ratio_from(fm, a0)
    else:
        if plugged is None:
            raise ValidationError("plugged ratio kind needs per-row ratio values")
        fratio = PluggedRatio(plugged, a0)
    return NuisanceSetRatio(mu, pi, gamma, kappa0, kappa1, fratio, a0, learner.sequential, lam)


# ---------------------------------------------------------------------------
# per-row evaluations


def _pi_at(pi1: np.ndarray, a0: int) -> np.ndarray:
    return pi1 if a0 == 1 else 1.0 - pi1


@dataclass(frozen=True)
class DensityRows:
    """Density-parameterization nuisances evaluated at n sample rows.

    ``points``/``qweights`` give each row's mediator support (0/1 with unit
    weights for a binary mediator, a trapezoid grid otherwise). ``mu_grid[i, g, a]``
    is mu(points[i, g], a, X_i); ``f_grid`` the density at a0 on that support;
    ``mu_obs[i, a]`` is mu(M_i, a, X_i); ``f_a0_obs``/``f_other_obs`` the
    densities of the observed M_i under a0 and 1 - a0.
    """

    a: np.ndarray
    m: np.ndarray
    y: np.ndarray
    a0: int
    binary_m: bool
    points: np.ndarray
    qweights: np.ndarray
    mu_grid: np.ndarray
    f_grid: np.ndarray
    f_other_grid: Optional[np.ndarray]
    mu_obs: np.ndarray
    f_a0_obs: np.ndarray
    f_other_obs: np.ndarray
    pi1: np.ndarray

    @property
    def n(self) -> int:
        return self.a.shape[0]

    def replace(self, **kw) -> "DensityRows":
        return dataclasses.replace(self, **kw)

    @property
    def pi_a0(self) -> np.ndarray:
        return _pi_at(self.pi1, self.a0)

    @property
    def is_a0(self) -> np.ndarray:
        return (self.a == self.a0).astype(float)

    def mediator_mean(self, values: np.ndarray) -> np.ndarray:
        """Integral of values(m) f(m | a0, X_i) dm per row, normalized by the integral of f."""
        wf = self.qweights * self.f_grid
        return np.sum(wf * values, axis=1) / np.sum(wf, axis=1)

    def xi_grid(self) -> np.ndarray:
        return self.mu_grid[:, :, 0] * (1.0 - self.pi1)[:, None] + self.mu_grid[:, :, 1] * self.pi1[:, None]

    def xi_obs(self) -> np.ndarray:
        return self.mu_obs[:, 0] * (1.0 - self.pi1) + self.mu_obs[:, 1] * self.pi1

    def theta(self) -> np.ndarray:
        return self.mediator_mean(self.xi_grid())

    def eta(self, a: int) -> np.ndarray:
        return self.mediator_mean(self.mu_grid[:, :, a])

    def mu_at_a(self) -> np.ndarray:
        return np.where(self.a == 1, self.mu_obs[:, 1], self.mu_obs[:, 0])

    def ratio_obs(self) -> np.ndarray:
        """f(M | a0, X) / f(M | A, X); exactly 1 on rows with A = a0."""
        return np.where(self.a == self.a0, 1.0, self.f_a0_obs / np.maximum(self.f_other_obs, 1e-300))

    def f1_a0(self) -> np.ndarray:
        return self.f_grid[:, 1]

    def with_f1_a0(self, p1: np.ndarray) -> "DensityRows":
        """Binary mediator only: replace f(1 | a0, X)."""
        f_grid = np.column_stack([1.0 - p1, p1])
        f_obs = np.where(self.m == 1, p1, 1.0 - p1)
        return self.replace(f_grid=f_grid, f_a0_obs=f_obs)


def evaluate_density(nset: NuisanceSetDensity, data: Dataset, a0: int) -> DensityRows:
    if data.mediator_kind is MediatorKind.MULTIVARIATE:
        raise UnsupportedKind("the density parameterization needs a univariate mediator")
    n = data.n
    pts, w = nset.fm.support(nset.grid_size)
    g = pts.shape[0]
    x_rep = np.repeat(data.x, g, axis=0)
    m_rep = np.tile(pts, n)
    mu_grid = np.stack([nset.mu.predict(m_rep, a, x_rep).reshape(n, g) for a in (0, 1)], axis=2)
    m = data.m[:, 0]
    mu_obs = np.column_stack([nset.mu.predict(m, a, data.x) for a in (0, 1)])
    binary = nset.fm.binary
    f_grid = nset.fm.eval_grid(pts, a0, data.x)
    f_other_grid = nset.fm.eval_grid(pts, 1 - a0, data.x) if binary else None
    if binary:
        mi = m.astype(np.int64)
        f_a0_obs = f_grid[np.arange(n), mi]
        f_other_obs = f_other_grid[np.arange(n), mi]
    else:
        f_a0_obs = nset.fm.eval(m, a0, data.x)
        f_other_obs = nset.fm.eval(m, 1 - a0, data.x)
    return DensityRows(
        a=np.asarray(data.a), m=m, y=np.asarray(data.y), a0=a0, binary_m=binary,
        points=np.broadcast_to(pts, (n, g)), qweights=np.broadcast_to(w, (n, g)),
        mu_grid=mu_grid, f_grid=f_grid, f_other_grid=f_other_grid, mu_obs=mu_obs,
        f_a0_obs=f_a0_obs, f_other_obs=f_other_obs, pi1=nset.pi.predict(data.x),
    )


@dataclass(frozen=True)
class RatioRows:
    """Ratio-parameterization nuisances at n sample rows.

    ``ratio_cf[i, a]`` is the density ratio at (M_i, a, X_i); it is only needed
    (and only available) when the outcome is binary.
    """

    a: np.ndarray
    y: np.ndarray
    a0: int
    mu_obs: np.ndarray
    pi1: np.ndarray
    gamma: np.ndarray
    kappa: np.ndarray
    ratio: np.ndarray
    ratio_cf: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.a.shape[0]

    def replace(self, **kw) -> "RatioRows":
        return dataclasses.replace(self, **kw)

    @property
    def pi_a0(self) -> np.ndarray:
        return _pi_at(self.pi1, self.a0)

    @property
    def is_a0(self) -> np.ndarray:
        return (self.a == self.a0).astype(float)

    def xi_obs(self) -> np.ndarray:
        return self.mu_obs[:, 0] * (1.0 - self.pi1) + self.mu_obs[:, 1] * self.pi1

    def mu_at_a(self) -> np.ndarray:
        return np.where(self.a == 1, self.mu_obs[:, 1], self.mu_obs[:, 0])


def evaluate_ratio(nset: NuisanceSetRatio, data: Dataset, with_counterfactual: bool = False,
                   with_ratio: bool = True) -> RatioRows:
    """Evaluate at the rows of ``data``; ``with_ratio=False`` fills the ratio with ones."""
    mu_obs = np.column_stack([nset.mu.predict(data.m, a, data.x) for a in (0, 1)])
    ratio = nset.fratio.row_ratio(data) if with_ratio else np.ones(data.n)
    ratio_cf = None
    if with_counterfactual:
        if isinstance(nset.fratio, PluggedRatio):
            raise UnsupportedKind("binary-outcome targeting needs ratios at both treatment levels; "
                                  "plugged ratios only cover the observed one")
        ratio_cf = np.column_stack([nset.fratio.ratio(data.m, np.full(data.n, a), data.x) for a in (0, 1)])
    return RatioRows(
        a=np.asarray(data.a), y=np.asarray(data.y), a0=nset.a0, mu_obs=mu_obs,
        pi1=nset.pi.predict(data.x), gamma=nset.gamma.predict(data.x),
        kappa=np.column_stack([nset.kappa0.predict(data.x), nset.kappa1.predict(data.x)]),
        ratio=ratio, ratio_cf=ratio_cf,
    )


def stack_rows(parts: list, index: list):
    """Reassemble per-fold row evaluations into one object in original row order."""
    n = sum(len(ix) for ix in index)
    order = np.concatenate(index)
    first = parts[0]
    values = {}
    for f in dataclasses.fields(first):
        v = getattr(first, f.name)
        if isinstance(v, np.ndarray) and v.ndim >= 1 and v.shape[0] == len(index[0]):
            out = np.empty((n,) + v.shape[1:], dtype=v.dtype)
            out[order] = np.concatenate([getattr(p, f.name) for p in parts], axis=0)
            values[f.name] = out
        else:
            values[f.name] = v
    return type(first)(**values)
