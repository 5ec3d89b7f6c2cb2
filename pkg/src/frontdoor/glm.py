"""Weighted least squares and IRLS logistic regression.

Every nuisance regression and every fluctuation fit in the package goes
through :func:`fit_linear` or :func:`fit_logistic`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional

import numpy as np
from scipy.special import expit

from .errors import AllZeroWeights, DegenerateOutcome, DimensionMismatch, SeparationDetected

RIDGE = 1e-8
SEPARATION_BOUND = 30.0
TERMS = ("intercept", "main", "interactions")


@dataclass(frozen=True)
class DesignSpec:
    """How raw input columns are expanded into a regression design.

    ``terms`` is one of ``"intercept"`` (no columns), ``"main"`` (inputs as-is) or
    ``"interactions"`` (inputs, all pairwise products, and squares of the
    non-binary inputs listed in ``square_cols``).
    """

    n_inputs: int
    terms: str = "main"
    square_cols: tuple = ()

    @classmethod
    def for_inputs(cls, z: np.ndarray, terms: str = "main") -> "DesignSpec":
        if terms not in TERMS:
            raise ValueError(f"unknown design terms {terms!r}; expected one of {TERMS}")
        z = np.atleast_2d(np.asarray(z, dtype=float).T).T
        squares = ()
        if terms == "interactions":
            squares = tuple(j for j in range(z.shape[1]) if not np.all((z[:, j] == 0) | (z[:, j] == 1)))
        return cls(n_inputs=z.shape[1], terms=terms, square_cols=squares)

    @property
    def n_columns(self) -> int:
        if self.terms == "intercept":
            return 0
        k = self.n_inputs
        if self.terms == "main":
            return k
        return k + k * (k - 1) // 2 + len(self.square_cols)

    def build(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        if z.shape[1] != self.n_inputs:
            raise DimensionMismatch(f"expected {self.n_inputs} input columns, got {z.shape[1]}")
        if self.terms == "intercept":
            return np.empty((z.shape[0], 0))
        if self.terms == "main":
            return z
        cols = [z]
        pairs = list(combinations(range(self.n_inputs), 2))
        if pairs:
            i, j = np.array(pairs).T
            cols.append(z[:, i] * z[:, j])
        if self.square_cols:
            sq = np.array(self.square_cols)
            cols.append(z[:, sq] ** 2)
        return np.hstack(cols)


@dataclass(frozen=True)
class LinearFit:
    coefficients: np.ndarray
    intercept: bool
    design_spec: Optional[DesignSpec] = None

    @property
    def n_features(self) -> int:
        return self.coefficients.shape[0] - int(self.intercept)

    def predict_inputs(self, z, offset=None) -> np.ndarray:
        return predict_linear(self, self.design_spec.build(z), offset)


@dataclass(frozen=True)
class LogisticFit:
    coefficients: np.ndarray
    intercept: bool
    converged: bool
    iterations: int
    design_spec: Optional[DesignSpec] = None
    deviance_history: tuple = field(default=(), repr=False)

    @property
    def n_features(self) -> int:
        return self.coefficients.shape[0] - int(self.intercept)

    def predict_inputs(self, z, offset=None, prob_clip: float = 1e-3) -> np.ndarray:
        return predict_logistic(self, self.design_spec.build(z), offset, prob_clip)


def _prepare(design, y, weights, offset, intercept):
    design = np.asarray(design, dtype=float)
    if design.ndim == 1:
        design = design[:, None]
    y = np.asarray(y, dtype=float).ravel()
    n = y.shape[0]
    if design.shape[0] != n:
        raise DimensionMismatch(f"design has {design.shape[0]} rows but outcome has {n}")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float).ravel()
    off = np.zeros(n) if offset is None else np.broadcast_to(np.asarray(offset, dtype=float), (n,)).copy()
    if w.shape[0] != n or off.shape[0] != n:
        raise DimensionMismatch("weights/offset length differs from outcome length")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    if not np.any(w > 0):
        raise AllZeroWeights("all regression weights are zero")
    X = np.hstack([np.ones((n, 1)), design]) if intercept else design
    if X.shape[1] == 0:
        raise DimensionMismatch("empty design without intercept")
    return X, y, w, off


def fit_linear(design, y, weights=None, offset=None, intercept: bool = True,
               design_spec: Optional[DesignSpec] = None) -> LinearFit:
    """Minimize sum_i w_i (y_i - offset_i - x_i b)^2.

    Full-rank problems are solved by least squares on the sqrt-weighted system;
    rank-deficient ones fall back to ridge-stabilised normal equations.
    """
    X, y, w, off = _prepare(design, y, weights, offset, intercept)
    sw = np.sqrt(w)
    Xw = X * sw[:, None]
    tw = (y - off) * sw
    beta, _, rank, _ = np.linalg.lstsq(Xw, tw, rcond=None)
    if rank < X.shape[1]:
        gram = Xw.T @ Xw + RIDGE * np.eye(X.shape[1])
        beta = np.linalg.solve(gram, Xw.T @ tw)
    return LinearFit(coefficients=beta, intercept=intercept, design_spec=design_spec)


def _check_columns(fit, design):
    design = np.asarray(design, dtype=float)
    if design.ndim == 1:
        design = design[:, None]
    if design.shape[1] != fit.n_features:
        raise DimensionMismatch(f"design has {design.shape[1]} columns, fit expects {fit.n_features}")
    return design


def linear_predictor(fit, design, offset=None) -> np.ndarray:
    design = _check_columns(fit, design)
    eta = design @ fit.coefficients[int(fit.intercept):]
    if fit.intercept:
        eta = eta + fit.coefficients[0]
    if offset is not None:
        eta = eta + offset
    return eta


def predict_linear(fit: LinearFit, design, offset=None) -> np.ndarray:
    return linear_predictor(fit, design, offset)


def predict_logistic(fit: LogisticFit, design, offset=None, prob_clip: float = 1e-3) -> np.ndarray:
    """Fitted probabilities clipped to ``[prob_clip, 1 - prob_clip]``."""
    p = expit(linear_predictor(fit, design, offset))
    return np.clip(p, prob_clip, 1.0 - prob_clip)


def _deviance(eta, y, w):
    # -2 * weighted Bernoulli log-likelihood, stable for large |eta|
    return 2.0 * np.sum(w * (y * np.logaddexp(0.0, -eta) + (1.0 - y) * np.logaddexp(0.0, eta)))


def _newton_direction(info, grad):
    try:
        c = np.linalg.cholesky(info)
        return np.linalg.solve(c.T, np.linalg.solve(c, grad))
    except np.linalg.LinAlgError:
        return np.linalg.solve(info + RIDGE * np.eye(info.shape[0]), grad)


def fit_logistic(design, y, weights=None, offset=None, intercept: bool = True, max_iter: int = 100,
                 tol: float = 1e-10, design_spec: Optional[DesignSpec] = None) -> LogisticFit:
    """IRLS maximum likelihood for a weighted Bernoulli model with optional offset.

    Starts from zero coefficients and halves the Newton step (at most 10 times)
    whenever the deviance would increase. Raises :class:`SeparationDetected` as
    soon as any coefficient exceeds 30 in absolute value.
    """
    X, y, w, off = _prepare(design, y, weights, offset, intercept)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("logistic outcome must be 0/1")
    pos = w > 0
    if np.ptp(y[pos]) == 0 and np.ptp(off[pos]) == 0:
        raise DegenerateOutcome(f"outcome is constant ({y[pos][0]:g}) with constant offset")

    k = X.shape[1]
    beta = np.zeros(k)
    eta = off.copy()
    dev = _deviance(eta, y, w)
    history = [dev]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = expit(eta)
        grad = X.T @ (w * (y - p))
        info = (X * (w * p * (1.0 - p))[:, None]).T @ X
        step = _newton_direction(info, grad)
        scale = 1.0
        for _ in range(11):
            cand = beta + scale * step
            eta_c = off + X @ cand
            dev_c = _deviance(eta_c, y, w)
            if dev_c <= dev * (1 + 1e-12) + 1e-300:
                break
            scale *= 0.5
        else:
            # no halving reduced the deviance: stay put, we are at the optimum numerically
            converged = True
            break
        change = np.max(np.abs(cand - beta))
        beta, eta, dev = cand, eta_c, dev_c
        history.append(dev)
        if np.any(np.abs(beta) > SEPARATION_BOUND):
            raise SeparationDetected(f"coefficient magnitude {np.max(np.abs(beta)):.1f} exceeds {SEPARATION_BOUND:g}")
        if change < tol:
            converged = True
            break
    return LogisticFit(coefficients=beta, intercept=intercept, converged=converged, iterations=it,
                       design_spec=design_spec, deviance_history=tuple(history))
