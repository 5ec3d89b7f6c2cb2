"""Simulation data-generating processes, Monte Carlo truths and the study runner.

Every DGP has an unmeasured confounder U of treatment and outcome that acts
only through A and Y, so the mediator carries the whole effect of A on Y.

Randomness comes from Philox streams keyed by ``(seed, stream)``; one stream per
generated variable keeps X fixed when, say, the mediator law changes.
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import itertools
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import expit

from .api import estimate
from .crossfit import Family, FoldedNuisances
from .data import Dataset, Estimator, EstimatorConfig, MediatorKind, OutcomeKind
from .density import CallableDensity, CallableRatio
from .errors import FrontDoorError, TargetingWarning, UnknownDgp, ValidationError
from .nuisance import (
    CovariateRegression,
    LearnerSpec,
    NuisanceSetDensity,
    NuisanceSetRatio,
    OutcomeModel,
    PropensityModel,
)

STREAM_X, STREAM_A, STREAM_U, STREAM_M, STREAM_Y = range(5)
ORACLE_SEED = 20240917
_GH_NODES = 40


def stream(seed: int, stream_id: int) -> np.random.Generator:
    """Independent counter-based generator for one variable of one replicate."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream_id)])))


@functools.lru_cache(maxsize=None)
def _hermite(k: int):
    # probabilists' nodes: E[g(Z)] = sum(w * g(z)) for Z ~ N(0, 1)
    z, w = np.polynomial.hermite_e.hermegauss(k)
    return z, w / np.sqrt(2 * np.pi)


@dataclass(frozen=True)
class Dgp:
    """One generating law.

    ``u_mean(a, x)`` with sd ``u_sd`` gives the latent confounder. A binary
    mediator has ``m_logit(a, x)``; a continuous one has ``m_mean(a, x)``
    of shape (n, d) and covariance ``m_cov``. ``y_index(u, m, x)`` is the
    outcome mean (continuous Y, noise sd ``y_sd``) or its logit (binary Y).
    It is linear in u with coefficient ``u_coef``.
    """

    name: str
    label: str
    mediator_kind: MediatorKind
    outcome_kind: OutcomeKind
    p: int
    propensity: Callable
    u_mean: Callable
    u_sd: float
    y_index: Callable
    u_coef: float = 1.0
    y_sd: float = 1.0
    m_logit: Optional[Callable] = None
    m_mean: Optional[Callable] = None
    m_cov: Optional[np.ndarray] = None

    @property
    def d(self) -> int:
        return 1 if self.m_cov is None else self.m_cov.shape[0]

    @property
    def binary_m(self) -> bool:
        return self.mediator_kind is MediatorKind.BINARY

    @property
    def binary_y(self) -> bool:
        return self.outcome_kind is OutcomeKind.BINARY

    # -- sampling ---------------------------------------------------------
    def draw_x(self, rng, n):
        return rng.uniform(0.0, 1.0, size=(n, self.p))

    def draw_m(self, rng, a, x):
        n = x.shape[0]
        if self.binary_m:
            return (rng.uniform(size=n) < expit(self.m_logit(a, x))).astype(float)[:, None]
        z = rng.standard_normal((n, self.d))
        return self.m_mean(a, x) + z @ np.linalg.cholesky(self.m_cov).T

    def sample(self, n: int, seed: int):
        """Return (x, a, u, m, y)."""
        x = self.draw_x(stream(seed, STREAM_X), n)
        a = (stream(seed, STREAM_A).uniform(size=n) < self.propensity(x)).astype(np.int64)
        u = self.u_mean(a, x) + self.u_sd * stream(seed, STREAM_U).standard_normal(n)
        m = self.draw_m(stream(seed, STREAM_M), a, x)
        index = self.y_index(u, m, x)
        rng_y = stream(seed, STREAM_Y)
        if self.binary_y:
            y = (rng_y.uniform(size=n) < expit(index)).astype(float)
        else:
            y = index + self.y_sd * rng_y.standard_normal(n)
        return x, a, u, m, y

    # -- generating conditionals ------------------------------------------
    def outcome_mean(self, m, a, x):
        """E[Y | M=m, A=a, X=x], integrating the confounder given (A, X)."""
        x = _as_matrix(x)
        n = x.shape[0]
        m = np.asarray(m, dtype=float).reshape(n, -1)
        a = np.broadcast_to(np.asarray(a, dtype=float).reshape(-1), (n,))
        u_bar = self.u_mean(a, x)
        if not self.binary_y:
            return self.y_index(u_bar, m, x)
        z, w = _hermite(_GH_NODES)
        base = self.y_index(np.zeros(n), m, x)
        lin = base[:, None] + self.u_coef * (u_bar[:, None] + self.u_sd * z[None, :])
        return expit(lin) @ w

    def mediator_density(self, m, a, x):
        x = _as_matrix(x)
        n = x.shape[0]
        a = np.broadcast_to(np.asarray(a, dtype=float).reshape(-1), (n,))
        if self.binary_m:
            p1 = expit(self.m_logit(a, x))
            mv = np.asarray(m, dtype=float).reshape(-1)
            return np.where(mv == 1, p1, 1.0 - p1)
        m = np.asarray(m, dtype=float).reshape(n, self.d)
        resid = m - self.m_mean(a, x)
        chol = np.linalg.cholesky(self.m_cov)
        z = np.linalg.solve(chol, resid.T).T
        log_det = 2.0 * np.sum(np.log(np.diag(chol)))
        return np.exp(-0.5 * np.sum(z * z, axis=1) - 0.5 * log_det - 0.5 * self.d * math.log(2 * math.pi))

    def mediator_ratio(self, m, a, x, a0):
        num = self.mediator_density(m, np.full(_as_matrix(x).shape[0], a0), x)
        return num / np.maximum(self.mediator_density(m, a, x), 1e-300)

    def mediator_expectation(self, g: Callable, a0: int, x, nodes: int = 12):
        """E[g(M) | A=a0, X=x] per row, exactly for binary M, by Gauss-Hermite otherwise."""
        x = _as_matrix(x)
        n = x.shape[0]
        a = np.full(n, a0, dtype=float)
        if self.binary_m:
            p1 = expit(self.m_logit(a, x))
            return (1.0 - p1) * g(np.zeros(n), x) + p1 * g(np.ones(n), x)
        z1, w1 = _hermite(nodes if self.d == 1 else 5)
        chol = np.linalg.cholesky(self.m_cov)
        mean = self.m_mean(a, x)
        total = np.zeros(n)
        for combo in itertools.product(range(z1.size), repeat=self.d):
            zvec = z1[list(combo)]
            weight = float(np.prod(w1[list(combo)]))
            total += weight * g(mean + chol @ zvec, x)
        return total

    def mediator_bounds(self, width: float = 8.0) -> tuple:
        """Quadrature range for a continuous univariate mediator."""
        grid = np.linspace(0.0, 1.0, 11)
        xs = np.array(list(itertools.product(grid, repeat=min(self.p, 2))))
        if self.p > 2:
            xs = np.column_stack([xs, np.full((xs.shape[0], self.p - 2), 0.5)])
        corners = np.concatenate([np.zeros((1, self.p)), np.ones((1, self.p)), xs])
        means = np.concatenate([self.m_mean(np.full(corners.shape[0], a), corners)[:, 0] for a in (0, 1)])
        sd = math.sqrt(float(self.m_cov[0, 0]))
        return float(means.min() - width * sd), float(means.max() + width * sd)


def _as_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def _m_sum(m):
    return np.asarray(m, dtype=float).reshape(m.shape[0], -1).sum(axis=1)


def _col(v):
    return np.asarray(v, dtype=float).reshape(-1)


# --- univariate family: uniform X, U ~ N(1+A+X, 1), Y ~ N(U+M+X, 1)

def _univ_prop(x):
    return 0.3 + 0.2 * x[:, 0]


def _weak_prop(x):
    return 0.001 + 0.998 * x[:, 0]


def _univ_u(a, x):
    return 1.0 + _col(a) + x[:, 0]


def _univ_y(u, m, x):
    return u + _m_sum(m) + x[:, 0]


def _univ_m_logit(a, x):
    return -1.0 + _col(a) + x[:, 0]


def _univ_m_mean(a, x):
    return (1.0 + _col(a) + x[:, 0])[:, None]


def _binary_y_index(u, m, x):
    return -2.0 + 0.5 * u + 0.5 * _m_sum(m) + 0.5 * x[:, 0]


def _biv_mean(a, x):
    a, x0 = _col(a), x[:, 0]
    return np.column_stack([1 + a + x0, -1 - 0.5 * a + 2 * x0])


def _quad_mean(a, x):
    a, x0 = _col(a), x[:, 0]
    return np.column_stack([1 + a + x0, -1 - 0.5 * a + 2 * x0, -1 + 2 * a + x0, 1 + 0.5 * a - x0])


BIV_COV = np.array([[2.0, 1.0], [1.0, 3.0]])
QUAD_COV = np.array([
    [5.0, -1.0, 0.0, 2.0],
    [-1.0, 6.0, 1.0, 0.0],
    [0.0, 1.0, 4.0, 3.0],
    [2.0, 0.0, 3.0, 7.0],
])

# --- interaction family: treatment-covariate and mediator-covariate products


def _mis_prop(x):
    return expit(-1.0 + x[:, 0])


def _mis_lin(a, x):
    a, x0 = _col(a), x[:, 0]
    return 1.0 + a + x0 - a * x0


def _mis_m_mean(a, x):
    return _mis_lin(a, x)[:, None]


def _mis_y(u, m, x):
    mv, x0 = _m_sum(m), x[:, 0]
    return u + mv + x0 - mv * x0


# --- ten-covariate family with quadratic terms

V_A = 0.1 * np.array([0.48, 0.07, 1, -1, -0.34, -0.12, 0.3, -0.35, 1, -0.1, 0.46,
                      0.33, 0, 0.45, 0.1, -0.32, -0.08, -0.2, 0.5, 0.5, -0.03])
V_U = np.array([-2, -1, -1, 2, 3, 0.5, 3, 2, -1, 1, -3, 1.5, -3, -2, 1, 3, 1.5], dtype=float)
V_M = 0.025 * np.array([3, 1.5, -1.5, -1.5, -1, -2, -3, -3, -1.5, 2, 1.5, 3, 1.5, 2, 0.5, 0.5,
                        3, -0.2, -0.33, 0.5, 0.3, -0.5])
V_Y = np.array([1, -2, -3, -1.5, 1, 0.5, -2, 1.5, -2, -3, -3, -1.5, -1, 0.5, 3, 1.5, 0.5, 3, 1,
                1.5, -2, 3, -1], dtype=float)


def _cf_prop(x):
    return expit(np.column_stack([np.ones(x.shape[0]), x, x ** 2]) @ V_A)


def _cf_u(a, x):
    a = _col(a)
    return np.column_stack([np.ones(x.shape[0]), a, x, a[:, None] * x[:, :5]]) @ V_U


def _cf_m_index(a, x):
    a = _col(a)
    return np.column_stack([np.ones(x.shape[0]), a, x, a[:, None] * x[:, :5], x[:, 5:] ** 2]) @ V_M


def _cf_y(u, m, x):
    mv = _m_sum(m)
    return np.column_stack([_col(u), mv, x, mv[:, None] * x[:, :5], mv ** 2, x[:, 5:] ** 2]) @ V_Y


def _one(v):
    return np.array([[float(v)]])


def _registry() -> dict:
    cont, binm, biv = MediatorKind.CONTINUOUS, MediatorKind.BINARY, MediatorKind.MULTIVARIATE
    ycont, ybin = OutcomeKind.CONTINUOUS, OutcomeKind.BINARY
    common = dict(u_mean=_univ_u, u_sd=1.0, y_index=_univ_y, p=1)
    specs = [
        Dgp("univ-binary", "UnivBinary", binm, ycont, propensity=_univ_prop, m_logit=_univ_m_logit, **common),
        Dgp("univ-continuous", "UnivContinuous", cont, ycont, propensity=_univ_prop, m_mean=_univ_m_mean,
            m_cov=_one(1.0), **common),
        Dgp("bivariate", "Bivariate", biv, ycont, propensity=_univ_prop, m_mean=_biv_mean, m_cov=BIV_COV, **common),
        Dgp("quadrivariate", "Quadrivariate", biv, ycont, propensity=_univ_prop, m_mean=_quad_mean,
            m_cov=QUAD_COV, **common),
        Dgp("weak-overlap-binary", "WeakOverlapBinary", binm, ycont, propensity=_weak_prop,
            m_logit=_univ_m_logit, **common),
        Dgp("weak-overlap-continuous", "WeakOverlapContinuous", cont, ycont, propensity=_weak_prop,
            m_mean=_univ_m_mean, m_cov=_one(1.0), **common),
        Dgp("weak-overlap-bivariate", "WeakOverlapBivariate", biv, ycont, propensity=_weak_prop,
            m_mean=_biv_mean, m_cov=BIV_COV, **common),
        Dgp("misspec-binary", "MisspecBinary", binm, ycont, p=1, propensity=_mis_prop, u_mean=_mis_lin,
            u_sd=math.sqrt(2.0), y_index=_mis_y, y_sd=math.sqrt(2.0),
            m_logit=lambda a, x: -1.0 + _col(a) + x[:, 0] - _col(a) * x[:, 0]),
        Dgp("misspec-continuous", "MisspecContinuous", cont, ycont, p=1, propensity=_mis_prop, u_mean=_mis_lin,
            u_sd=math.sqrt(2.0), y_index=_mis_y, y_sd=math.sqrt(2.0), m_mean=_mis_m_mean, m_cov=_one(2.0)),
        Dgp("crossfit-binary", "CrossfitBinary", binm, ycont, p=10, propensity=_cf_prop, u_mean=_cf_u,
            u_sd=math.sqrt(2.0), y_index=_cf_y, u_coef=V_Y[0], y_sd=math.sqrt(2.0), m_logit=_cf_m_index),
        Dgp("crossfit-continuous", "CrossfitContinuous", cont, ycont, p=10, propensity=_cf_prop, u_mean=_cf_u,
            u_sd=1.0, y_index=_cf_y, u_coef=V_Y[0], y_sd=1.0, m_mean=lambda a, x: _cf_m_index(a, x)[:, None],
            m_cov=_one(1.0)),
        Dgp("univ-binary-binary-y", "UnivBinaryBinaryY", binm, ybin, p=1, propensity=_univ_prop,
            u_mean=_univ_u, u_sd=1.0, y_index=_binary_y_index, u_coef=0.5, m_logit=_univ_m_logit),
    ]
    return {s.name: s for s in specs}


DGPS = _registry()
DGP_NAMES = tuple(DGPS)
_BY_LABEL = {d.label: d for d in DGPS.values()}


def get_dgp(name: str) -> Dgp:
    """Look up a DGP by its kebab-case name or CamelCase label."""
    if name in DGPS:
        return DGPS[name]
    if name in _BY_LABEL:
        return _BY_LABEL[name]
    raise UnknownDgp(f"unknown DGP {name!r}; valid names: {', '.join(DGP_NAMES)}")


@dataclass(frozen=True)
class DgpSpec:
    name: str
    n: int
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "name", get_dgp(self.name).name)
        if self.n < 1:
            raise ValidationError(f"sample size must be positive, got {self.n}")

    @property
    def dgp(self) -> Dgp:
        return DGPS[self.name]


def generate(spec: DgpSpec) -> Dataset:
    """Draw ``spec.n`` rows; the confounder is dropped."""
    dgp = spec.dgp
    x, a, _, m, y = dgp.sample(spec.n, spec.seed)
    return Dataset(x=x, a=a, m=m, y=y, mediator_kind=dgp.mediator_kind)


# ---------------------------------------------------------------------------
# truth


def _xi_true(dgp: Dgp, m, x):
    p1 = dgp.propensity(x)
    n = x.shape[0]
    return dgp.outcome_mean(m, np.zeros(n), x) * (1 - p1) + dgp.outcome_mean(m, np.ones(n), x) * p1


@functools.lru_cache(maxsize=None)
def _truth_cached(name: str, a0: int, mc_draws: int, seed: int) -> float:
    dgp = DGPS[name]
    chunk = 200_000
    total = 0.0
    done = 0
    rng_x, rng_m = stream(seed, STREAM_X), stream(seed, STREAM_M)
    while done < mc_draws:
        k = min(chunk, mc_draws - done)
        x = dgp.draw_x(rng_x, k)
        if dgp.binary_m:
            # exact sum over the two mediator values given X
            vals = dgp.mediator_expectation(lambda m, xx: _xi_true(dgp, m, xx), a0, x)
        else:
            # same normal draws for either a0 (common random numbers)
            z = rng_m.standard_normal((k, dgp.d))
            m = dgp.m_mean(np.full(k, a0, dtype=float), x) + z @ np.linalg.cholesky(dgp.m_cov).T
            vals = _xi_true(dgp, m, x)
        total += float(np.sum(vals))
        done += k
    return total / mc_draws


def truth_psi(spec, a0: int, mc_draws: int = 1_000_000, seed: int = ORACLE_SEED) -> float:
    """Monte Carlo value of E[Y^{a0}] from the generating conditionals (cached)."""
    name = spec.name if isinstance(spec, (DgpSpec, Dgp)) else get_dgp(spec).name
    return _truth_cached(name, int(a0), int(mc_draws), int(seed))


def truth_ace(spec, mc_draws: int = 1_000_000, seed: int = ORACLE_SEED) -> float:
    return truth_psi(spec, 1, mc_draws, seed) - truth_psi(spec, 0, mc_draws, seed)


# ---------------------------------------------------------------------------
# generating-truth nuisances


def oracle_density_set(dgp: Dgp, cfg: EstimatorConfig) -> NuisanceSetDensity:
    if dgp.mediator_kind is MediatorKind.MULTIVARIATE:
        raise ValidationError("density nuisances need a univariate mediator")
    mu = OutcomeModel(dgp.outcome_mean, dgp.binary_y)
    pi = PropensityModel(dgp.propensity, cfg.prob_clip)
    bounds = None if dgp.binary_m else dgp.mediator_bounds()
    fm = CallableDensity(lambda m, a, x: dgp.mediator_density(m, a, x), dgp.binary_m, bounds)
    return NuisanceSetDensity(mu, pi, fm, cfg.integration_grid_size)


def oracle_ratio_set(dgp: Dgp, cfg: EstimatorConfig, a0: int) -> NuisanceSetRatio:
    mu = OutcomeModel(dgp.outcome_mean, dgp.binary_y)
    pi = PropensityModel(dgp.propensity, cfg.prob_clip)

    def gamma(x):
        return dgp.mediator_expectation(lambda m, xx: _xi_true(dgp, m, xx), a0, x)

    def kappa(a):
        return lambda x: dgp.mediator_expectation(
            lambda m, xx: dgp.outcome_mean(m, np.full(xx.shape[0], a), xx), a0, x)

    ratio = CallableRatio(lambda m, a, x: dgp.mediator_ratio(m, a, x, a0), a0)
    return NuisanceSetRatio(mu, pi, CovariateRegression(gamma), CovariateRegression(kappa(0)),
                            CovariateRegression(kappa(1)), ratio, a0)


def oracle_nuisances(dgp, cfg: EstimatorConfig):
    """Factory for :func:`frontdoor.api.estimate` that plugs in the generating conditionals."""
    dgp = dgp if isinstance(dgp, Dgp) else get_dgp(getattr(dgp, "name", dgp))

    def factory(family, a0, folds):
        k = np.unique(folds).size
        if Family(family) is Family.PSI1:
            nset = oracle_density_set(dgp, cfg)
        else:
            nset = oracle_ratio_set(dgp, cfg, a0)
        return FoldedNuisances(folds=folds, sets=[nset] * k)

    return factory


def efficient_variance(spec, target="ace", n: int = 100_000, seed: int = ORACLE_SEED + 1,
                       cfg: Optional[EstimatorConfig] = None) -> float:
    """Mean squared influence value at the truth, on one large sample with generating nuisances."""
    from .eif import density_eif, ratio_eif
    from .nuisance import evaluate_density, evaluate_ratio

    dgp = spec.dgp if isinstance(spec, DgpSpec) else get_dgp(spec)
    cfg = cfg or EstimatorConfig(outcome_kind=dgp.outcome_kind)
    data = generate(DgpSpec(dgp.name, n, seed))
    levels = (1, 0) if target == "ace" else (int(target),)
    totals = []
    for a0 in levels:
        psi = truth_psi(dgp, a0)
        if dgp.mediator_kind is MediatorKind.MULTIVARIATE:
            totals.append(ratio_eif(evaluate_ratio(oracle_ratio_set(dgp, cfg, a0), data), psi).total)
        else:
            totals.append(density_eif(evaluate_density(oracle_density_set(dgp, cfg), data, a0), psi).total)
    total = totals[0] - totals[1] if len(totals) == 2 else totals[0]
    return float(np.mean(total ** 2))


# ---------------------------------------------------------------------------
# studies


@dataclass
class EstimatorSummary:
    estimator: str
    n: int
    bias: float
    sd: float
    mse: float
    coverage: float
    width: float
    failed: int

    def as_row(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class SimReport:
    """Aggregates over replicates. ``sd`` uses the R - 1 divisor, so mse = bias^2 + sd^2 (R - 1) / R."""

    dgp: str
    n: int
    target: str
    truth: float
    replicates: int
    seed: int
    rows: list = field(default_factory=list)
    estimates: dict = field(default_factory=dict)

    CSV_COLUMNS = ("estimator", "n", "bias", "sd", "mse", "coverage", "width", "failed")

    def row(self, estimator) -> EstimatorSummary:
        key = Estimator(estimator).value
        for r in self.rows:
            if r.estimator == key:
                return r
        raise KeyError(key)

    def psi(self, estimator) -> np.ndarray:
        """Point estimates of successful replicates, in replicate order."""
        return np.array([e["psi"] for e in self.estimates[Estimator(estimator).value] if e["psi"] is not None])

    def to_dict(self) -> dict:
        return {
            "schema": 1,
            "dgp": self.dgp,
            "n": self.n,
            "target": self.target,
            "truth": self.truth,
            "replicates": self.replicates,
            "seed": self.seed,
            "rows": [r.as_row() for r in self.rows],
            "estimates": self.estimates,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "SimReport":
        try:
            if payload.get("schema") != 1:
                raise ValidationError(f"unsupported report schema {payload.get('schema')!r}")
            rows = [EstimatorSummary(**r) for r in payload["rows"]]
            return cls(payload["dgp"], int(payload["n"]), str(payload["target"]), float(payload["truth"]),
                       int(payload["replicates"]), int(payload["seed"]), rows, payload.get("estimates", {}))
        except (KeyError, TypeError, AttributeError) as exc:
            raise ValidationError(f"malformed report: {exc}") from None

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def read_json(cls, path) -> "SimReport":
        try:
            with open(path) as fh:
                payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from None
        except OSError as exc:
            raise ValidationError(f"cannot read {path}: {exc.strerror}") from None
        if not isinstance(payload, dict):
            raise ValidationError(f"{path}: report must be a JSON object")
        return cls.from_dict(payload)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.CSV_COLUMNS)
            for r in self.rows:
                w.writerow([getattr(r, c) if not isinstance(getattr(r, c), float) else repr(getattr(r, c))
                            for c in self.CSV_COLUMNS])


def summarize(estimator: str, n: int, truth: float, records: list) -> EstimatorSummary:
    ok = [r for r in records if r["psi"] is not None]
    failed = len(records) - len(ok)
    if not ok:
        nan = float("nan")
        return EstimatorSummary(estimator, n, nan, nan, nan, nan, nan, failed)
    psi = np.array([r["psi"] for r in ok])
    lo = np.array([r["lo"] for r in ok])
    hi = np.array([r["hi"] for r in ok])
    err = psi - truth
    sd = float(np.std(psi, ddof=1)) if psi.size > 1 else 0.0
    return EstimatorSummary(
        estimator=estimator, n=n, bias=float(np.mean(err)), sd=sd, mse=float(np.mean(err ** 2)),
        coverage=float(np.mean((lo <= truth) & (truth <= hi))), width=float(np.mean(hi - lo)), failed=failed,
    )


def _run_replicate(job):
    name, n, seed, rep, estimators, learner, cfg, target, oracle = job
    dgp = DGPS[name]
    data = generate(DgpSpec(name, n, seed + rep))
    factory = oracle_nuisances(dgp, cfg) if oracle else None
    out = {}
    for est in estimators:
        ecfg = dataclasses.replace(cfg, estimator=Estimator(est), seed=seed + rep,
                                   a0=cfg.a0 if target == "ace" else int(target))
        record = {"replicate": rep, "psi": None, "se": None, "lo": None, "hi": None, "error": None}
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", TargetingWarning)
                res = estimate(data, ecfg, learner, ace_effect=target == "ace", nuisances=factory)
            if not (np.isfinite(res.psi) and np.isfinite(res.se)):
                raise FloatingPointError("non-finite estimate")
            record.update(psi=res.psi, se=res.se, lo=res.ci[0], hi=res.ci[1])
        except (FrontDoorError, FloatingPointError, np.linalg.LinAlgError) as exc:
            record["error"] = f"{type(exc).__name__}: {exc}"
        out[Estimator(est).value] = record
    return out


def thread_count() -> int:
    raw = os.environ.get("FD_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValidationError(f"FD_THREADS must be a positive integer, got {raw!r}") from None


def run_study(spec: DgpSpec, estimators: Sequence, replicates: int, learner_spec: Optional[LearnerSpec] = None,
              cfg: Optional[EstimatorConfig] = None, target="ace", oracle: bool = False,
              threads: Optional[int] = None) -> SimReport:
    """Replicate seed r uses ``spec.seed + r``. ``target`` is ``"ace"`` or a treatment level."""
    if replicates < 2:
        raise ValidationError("a study needs at least 2 replicates")
    dgp = spec.dgp
    cfg = cfg or EstimatorConfig(outcome_kind=dgp.outcome_kind)
    learner = learner_spec or LearnerSpec()
    names = [Estimator(e).value for e in estimators]
    target = "ace" if target == "ace" else str(int(target))
    jobs = [(dgp.name, spec.n, spec.seed, r, names, learner, cfg, target, oracle) for r in range(replicates)]
    threads = thread_count() if threads is None else threads
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_replicate, jobs))
    else:
        results = [_run_replicate(j) for j in jobs]
    truth = truth_ace(dgp) if target == "ace" else truth_psi(dgp, int(target))
    estimates = {e: [res[e] for res in results] for e in names}
    rows = [summarize(e, spec.n, truth, estimates[e]) for e in names]
    return SimReport(dgp.name, spec.n, target, truth, replicates, spec.seed, rows, estimates)
