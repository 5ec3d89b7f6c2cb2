"""Conditional mediator densities, density ratios and integration over the mediator."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from .data import Dataset, MediatorKind
from .errors import EmptyTreatmentArm, UnsupportedKind
from .glm import DesignSpec, LinearFit, LogisticFit, fit_linear, fit_logistic, predict_linear

SQRT_2PI = math.sqrt(2.0 * math.pi)
_CHUNK = 2048


class DensityKind(str, enum.Enum):
    KERNEL = "kernel"
    NORMAL = "normal"
    BERNOULLI = "bernoulli"
    CALLABLE = "callable"


def silverman(values: np.ndarray) -> float:
    """1.06 * sd * n^(-1/5); falls back to sd = 1 for fewer than two rows or zero spread."""
    n = values.shape[0]
    sd = float(np.std(values, ddof=1)) if n > 1 else 0.0
    if not np.isfinite(sd) or sd <= 0:
        sd = 1.0
    return 1.06 * sd * n ** (-0.2)


def trapezoid_weights(points: np.ndarray) -> np.ndarray:
    dx = np.diff(points)
    w = np.zeros_like(points)
    w[:-1] += dx / 2
    w[1:] += dx / 2
    return w


def _as_rows(m, a, x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None] if np.ndim(m) else x[None, :]
    n = x.shape[0]
    m = np.broadcast_to(np.asarray(m, dtype=float).reshape(-1), (n,))
    a = np.broadcast_to(np.asarray(a).reshape(-1), (n,)).astype(np.int64)
    return m, a, x


class CondDensityModel:
    """Common interface: pointwise evaluation and a quadrature support over the mediator."""

    kind: DensityKind
    binary: bool = False

    def eval(self, m, a, x) -> np.ndarray:
        raise NotImplementedError

    def eval_grid(self, points: np.ndarray, a, x) -> np.ndarray:
        """Density at every ``points`` value for every row of ``x``: shape (n, G)."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        n, g = x.shape[0], points.shape[0]
        a = np.broadcast_to(np.asarray(a).reshape(-1), (n,))
        out = self.eval(np.tile(points, n), np.repeat(a, g), np.repeat(x, g, axis=0))
        return out.reshape(n, g)

    def grid_bounds(self) -> tuple[float, float]:
        raise NotImplementedError

    def support(self, grid_size: int = 200) -> tuple[np.ndarray, np.ndarray]:
        """Mediator points and quadrature weights (summation weights for binary M)."""
        if self.binary:
            return np.array([0.0, 1.0]), np.array([1.0, 1.0])
        lo, hi = self.grid_bounds()
        pts = np.linspace(lo, hi, grid_size)
        return pts, trapezoid_weights(pts)


class KernelDensity(CondDensityModel):
    """Per-arm product-Gaussian kernel estimate of f(m | a, x) with Silverman bandwidths."""

    kind = DensityKind.KERNEL

    def __init__(self, m: np.ndarray, a: np.ndarray, x: np.ndarray, bandwidth_scale: float = 1.0):
        m = np.asarray(m, dtype=float).ravel()
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        self.arms = {}
        for arm in (0, 1):
            rows = a == arm
            if not rows.any():
                raise EmptyTreatmentArm(f"no training rows with A={arm} for the mediator density")
            ma, xa = m[rows], x[rows]
            h_m = bandwidth_scale * silverman(ma)
            h_x = np.array([bandwidth_scale * silverman(xa[:, j]) for j in range(x.shape[1])])
            self.arms[arm] = (ma, xa, h_m, h_x)
        self._lo = float(m.min()) - 4 * max(v[2] for v in self.arms.values())
        self._hi = float(m.max()) + 4 * max(v[2] for v in self.arms.values())

    def bandwidths(self, arm: int) -> tuple[float, np.ndarray]:
        _, _, h_m, h_x = self.arms[arm]
        return h_m, h_x

    def _log_weights(self, arm, x):
        # normalized log kernel weights over the arm's training rows, shape (n, n_a)
        _, xa, _, h_x = self.arms[arm]
        z = (x[:, None, :] - xa[None, :, :]) / h_x
        logw = -0.5 * np.sum(z * z, axis=2)
        return logw - logsumexp(logw, axis=1, keepdims=True)

    def eval(self, m, a, x) -> np.ndarray:
        m, a, x = _as_rows(m, a, x)
        out = np.empty(m.shape[0])
        for arm in (0, 1):
            idx = np.flatnonzero(a == arm)
            ma, _, h_m, _ = self.arms[arm]
            for s in range(0, idx.size, _CHUNK):
                rows = idx[s:s + _CHUNK]
                w = np.exp(self._log_weights(arm, x[rows]))
                km = np.exp(-0.5 * ((m[rows, None] - ma[None, :]) / h_m) ** 2) / (h_m * SQRT_2PI)
                out[rows] = np.sum(w * km, axis=1)
        return out

    def eval_grid(self, points, a, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        n = x.shape[0]
        a = np.broadcast_to(np.asarray(a).reshape(-1), (n,))
        out = np.empty((n, points.shape[0]))
        for arm in (0, 1):
            idx = np.flatnonzero(a == arm)
            ma, _, h_m, _ = self.arms[arm]
            km = np.exp(-0.5 * ((ma[:, None] - points[None, :]) / h_m) ** 2) / (h_m * SQRT_2PI)
            for s in range(0, idx.size, _CHUNK):
                rows = idx[s:s + _CHUNK]
                out[rows] = np.exp(self._log_weights(arm, x[rows])) @ km
        return out

    def grid_bounds(self):
        return self._lo, self._hi


class NormalDensity(CondDensityModel):
    """Homoscedastic normal f(m | a, x) with a linear mean in (A, X)."""

    kind = DensityKind.NORMAL

    def __init__(self, m, a, x, terms: str = "main"):
        m = np.asarray(m, dtype=float).ravel()
        z = np.column_stack([a, x])
        spec = DesignSpec.for_inputs(z, terms)
        self.fit = fit_linear(spec.build(z), m, design_spec=spec)
        resid = m - predict_linear(self.fit, spec.build(z))
        dof = max(m.shape[0] - self.fit.coefficients.shape[0], 1)
        self.sigma = float(np.sqrt(np.sum(resid ** 2) / dof)) or 1.0
        self._lo = float(m.min()) - 4 * self.sigma
        self._hi = float(m.max()) + 4 * self.sigma

    def mean(self, a, x) -> np.ndarray:
        _, a, x = _as_rows(0.0, a, x)
        return self.fit.predict_inputs(np.column_stack([a, x]))

    def eval(self, m, a, x):
        m, a, x = _as_rows(m, a, x)
        z = (m - self.mean(a, x)) / self.sigma
        return np.exp(-0.5 * z * z) / (self.sigma * SQRT_2PI)

    def grid_bounds(self):
        return self._lo, self._hi


class BernoulliDensity(CondDensityModel):
    """Logistic model for a binary mediator; eval returns the probability mass."""

    kind = DensityKind.BERNOULLI
    binary = True

    def __init__(self, m, a, x, terms: str = "main", prob_clip: float = 1e-3):
        z = np.column_stack([a, x])
        spec = DesignSpec.for_inputs(z, terms)
        self.fit = fit_logistic(spec.build(z), np.asarray(m, dtype=float).ravel(), design_spec=spec)
        self.prob_clip = prob_clip

    def prob1(self, a, x) -> np.ndarray:
        _, a, x = _as_rows(0.0, a, x)
        return self.fit.predict_inputs(np.column_stack([a, x]), prob_clip=self.prob_clip)

    def eval(self, m, a, x):
        m, a, x = _as_rows(m, a, x)
        p = self.prob1(a, x)
        return np.where(m == 1, p, 1.0 - p)


class CallableDensity(CondDensityModel):
    """Wraps a user-supplied f(m, a, x); used for hand-set and generating-truth nuisances."""

    kind = DensityKind.CALLABLE

    def __init__(self, fn: Callable, binary: bool, bounds: Optional[tuple[float, float]] = None):
        self.fn = fn
        self.binary = binary
        self.bounds = bounds

    def eval(self, m, a, x):
        m, a, x = _as_rows(m, a, x)
        return np.asarray(self.fn(m, a, x), dtype=float)

    def grid_bounds(self):
        if self.bounds is None:
            raise UnsupportedKind("callable continuous density needs explicit grid bounds")
        return self.bounds


def fit_cond_density(data: Dataset, kind, bandwidth_rule="silverman", terms: str = "main",
                     prob_clip: float = 1e-3) -> CondDensityModel:
    """Fit f(m | a, x) of the requested kind.

    ``bandwidth_rule`` is ``"silverman"`` or a positive multiplier applied to the
    Silverman bandwidths (kernel kind only).
    """
    kind = DensityKind(kind)
    for arm in (0, 1):
        if not np.any(data.a == arm):
            raise EmptyTreatmentArm(f"no rows with A={arm}; cannot fit the mediator density")
    if data.mediator_kind is MediatorKind.MULTIVARIATE:
        raise UnsupportedKind("multivariate mediator densities are not fit directly; use a ratio-based estimator")
    m = data.m[:, 0]
    if kind is DensityKind.BERNOULLI:
        if data.mediator_kind is not MediatorKind.BINARY:
            raise UnsupportedKind("Bernoulli density needs a binary mediator")
        return BernoulliDensity(m, data.a, data.x, terms, prob_clip)
    if data.mediator_kind is MediatorKind.BINARY:
        raise UnsupportedKind(f"{kind.value} density needs a continuous mediator")
    if kind is DensityKind.KERNEL:
        scale = 1.0 if bandwidth_rule == "silverman" else float(bandwidth_rule)
        return KernelDensity(m, data.a, data.x, scale)
    if kind is DensityKind.NORMAL:
        return NormalDensity(m, data.a, data.x, terms)
    raise UnsupportedKind(f"cannot fit density kind {kind.value}")


def integrate_mediator(g: Callable, model: CondDensityModel, a0: int, x, grid_size: int = 200) -> float:
    """Integral of g(m) f(m | a0, x) dm for one covariate row ``x``.

    Binary models sum over m in {0, 1}; continuous models use the trapezoid rule.
    """
    if not isinstance(model, CondDensityModel):
        raise UnsupportedKind("integration needs a univariate conditional density model")
    pts, w = model.support(grid_size)
    x = np.asarray(x, dtype=float).reshape(1, -1)
    f = model.eval_grid(pts, a0, x)[0]
    return float(np.sum(w * np.asarray(g(pts), dtype=float) * f))


class RatioKind(str, enum.Enum):
    BAYES = "bayes"
    FROM_DENSITY = "from-density"
    PLUGGED = "plugged"


class DensityRatioModel:
    """f(m | a0, x) / f(m | a, x) for a fixed reference level ``a0``."""

    kind: RatioKind
    a0: int

    def ratio(self, m, a, x) -> np.ndarray:
        raise NotImplementedError

    def row_ratio(self, data: Dataset) -> np.ndarray:
        return self.ratio(data.m, data.a, data.x)


class FromDensityRatio(DensityRatioModel):
    kind = RatioKind.FROM_DENSITY

    def __init__(self, model: CondDensityModel, a0: int):
        self.model, self.a0 = model, a0

    def ratio(self, m, a, x):
        m = np.asarray(m, dtype=float).reshape(-1)
        x = np.asarray(x, dtype=float)
        a = np.broadcast_to(np.asarray(a).reshape(-1), m.shape)
        num = self.model.eval(m, self.a0, x)
        den = self.model.eval(m, a, x)
        r = num / np.maximum(den, 1e-300)
        return np.where(a == self.a0, 1.0, r)


class BayesRatio(DensityRatioModel):
    """Bayes-rule ratio lambda(a0|x,m)/lambda(a|x,m) * pi(a|x)/pi(a0|x).

    ``lam`` is a logistic fit of A on inputs [X, M]; ``pi`` a logistic fit of A on X.
    """

    kind = RatioKind.BAYES

    def __init__(self, lam: LogisticFit, pi: LogisticFit, a0: int, prob_clip: float = 1e-3):
        self.lam, self.pi, self.a0, self.prob_clip = lam, pi, a0, prob_clip

    def ratio(self, m, a, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        m = np.asarray(m, dtype=float).reshape(x.shape[0], -1)
        a = np.broadcast_to(np.asarray(a).reshape(-1), (x.shape[0],))
        lam1 = self.lam.predict_inputs(np.column_stack([x, m]), prob_clip=self.prob_clip)
        pi1 = self.pi.predict_inputs(x, prob_clip=self.prob_clip)
        lam_a0 = lam1 if self.a0 == 1 else 1.0 - lam1
        lam_a = np.where(a == 1, lam1, 1.0 - lam1)
        pi_a0 = pi1 if self.a0 == 1 else 1.0 - pi1
        pi_a = np.where(a == 1, pi1, 1.0 - pi1)
        return np.where(a == self.a0, 1.0, (lam_a0 / lam_a) * (pi_a / pi_a0))


class PluggedRatio(DensityRatioModel):
    """Externally computed per-row ratios, usable only on the rows they were computed for."""

    kind = RatioKind.PLUGGED

    def __init__(self, values: np.ndarray, a0: int):
        self.values = np.asarray(values, dtype=float)
        self.a0 = a0

    def ratio(self, m, a, x):
        raise UnsupportedKind("plugged ratios exist only for their own rows")

    def row_ratio(self, data: Dataset) -> np.ndarray:
        if data.n != self.values.shape[0]:
            raise UnsupportedKind(f"plugged ratio has {self.values.shape[0]} rows, data has {data.n}")
        return np.where(data.a == self.a0, 1.0, self.values)


class CallableRatio(DensityRatioModel):
    kind = RatioKind.FROM_DENSITY

    def __init__(self, fn: Callable, a0: int):
        self.fn, self.a0 = fn, a0

    def ratio(self, m, a, x):
        x = np.asarray(x, dtype=float)
        a = np.broadcast_to(np.asarray(a).reshape(-1), (x.shape[0],))
        return np.where(a == self.a0, 1.0, np.asarray(self.fn(m, a, x), dtype=float))


def density_ratio_from(model: CondDensityModel, a0: int) -> FromDensityRatio:
    return FromDensityRatio(model, a0)


def density_ratio_bayes(lam: LogisticFit, pi: LogisticFit, a0: int, prob_clip: float = 1e-3) -> BayesRatio:
    return BayesRatio(lam, pi, a0, prob_clip)
