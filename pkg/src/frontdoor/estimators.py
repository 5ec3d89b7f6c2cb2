"""One-step and targeted (TMLE) estimators of the front-door mean E[Y^{a0}].

Every estimator has two layers: a public function taking a fitted nuisance
set plus data, and a ``target_*``/``onestep_*_rows`` core working on per-row
nuisance evaluations. The cores accept an optional fold label vector so the
cross-fitted variants reuse them unchanged: with folds, each fluctuation is
still a single pooled fit over all rows, and the final estimate is the
average of per-fold means.
"""

from __future__ import annotations

import math
import warnings
from typing import Callable, Optional

import numpy as np
from scipy.special import expit, logit

from .data import Dataset, EstimatorConfig, OutcomeKind
from .eif import EstimateResult, density_eif, fold_mean, ratio_eif, wald
from .errors import (
    DegenerateOutcome,
    EmptyEpsilonRange,
    MaxIterationsExceeded,
    SeparationDetected,
    TargetingWarning,
    UnsupportedKind,
)
from .glm import fit_linear, fit_logistic
from .nuisance import (
    CovariateRegression,
    DensityRows,
    NuisanceSetDensity,
    NuisanceSetRatio,
    RatioRows,
    evaluate_density,
    evaluate_ratio,
)

EPS_CAP = 1.0
GRID_POINTS = 200
STALL_EPSILON = 1e-12


# ---------------------------------------------------------------------------
# submodels and losses


def logistic_submodel(p, h, eps):
    """expit(logit p + eps * h): used for pi, binary f_M and binary-outcome mu."""
    return expit(logit(p) + eps * h)


def shift_submodel(v, eps):
    """v + eps: continuous-outcome mu and the gamma regression."""
    return v + eps


def multiplicative_submodel(f, h, eps):
    """f * (1 + eps * h): continuous-mediator density."""
    return f * (1.0 + eps * h)


def bernoulli_loss(y, p, weights=None):
    w = 1.0 if weights is None else weights
    return float(-np.mean(w * (y * np.log(p) + (1.0 - y) * np.log1p(-p))))


def log_density_loss(f, weights):
    return float(-np.mean(weights * np.log(f)))


def squared_loss(y, v, weights):
    return float(np.mean(weights * (y - v) ** 2))


# ---------------------------------------------------------------------------
# fluctuation fits


def _warn(msg, category=TargetingWarning):
    warnings.warn(msg, category, stacklevel=3)


def logistic_epsilon(y, p, h, weights=None, label: str = "") -> float:
    """No-intercept logistic fit of y on h with offset logit(p)."""
    w = np.ones_like(h) if weights is None else np.asarray(weights, dtype=float)
    off = logit(p)
    use = (w > 0) & np.isfinite(off)
    if not np.any(use) or not np.any(h[use] != 0):
        return 0.0
    # a fully explained outcome carries no signal for the fluctuation
    if np.all(np.abs(y[use] - expit(off[use])) == 0):
        return 0.0
    try:
        fit = fit_logistic(h[use, None], y[use], weights=w[use], offset=off[use], intercept=False)
    except SeparationDetected:
        _warn(f"separation in the {label} fluctuation; step skipped")
        return 0.0
    except DegenerateOutcome:
        _warn(f"degenerate outcome in the {label} fluctuation; step skipped")
        return 0.0
    return float(fit.coefficients[0])


def intercept_epsilon(y, offset, weights) -> float:
    """Weighted intercept-only least squares of y on offset."""
    w = np.asarray(weights, dtype=float)
    if not np.any(w > 0):
        return 0.0
    fit = fit_linear(np.empty((y.shape[0], 0)), y, weights=w, offset=offset, intercept=True)
    return float(fit.coefficients[0])


def epsilon_domain(h: np.ndarray, cap: float = EPS_CAP) -> tuple[float, float]:
    """Open interval of eps keeping 1 + eps * h positive for every entry of h, intersected with [-cap, cap]."""
    h = np.ravel(h)
    pos, neg = h[h > 0], h[h < 0]
    with np.errstate(over="ignore", divide="ignore"):
        lo = float(np.max(-1.0 / pos)) if pos.size else -math.inf
        hi = float(np.min(-1.0 / neg)) if neg.size else math.inf
    return max(lo, -cap), min(hi, cap)


def _golden(f: Callable, a: float, b: float, tol: float = 1e-12, max_iter: int = 200) -> float:
    inv = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - inv * (b - a), a + inv * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol * (1.0 + abs(a) + abs(b)):
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv * (b - a)
            fd = f(d)
    return (a + b) / 2.0


def multiplicative_epsilon(h_obs: np.ndarray, weights: np.ndarray, h_all: np.ndarray) -> float:
    """Minimize -mean(w log(1 + eps h_obs)) over the valid eps range.

    The range keeps every value in ``h_all`` (observed rows and quadrature
    points) inside the positive half-line. Search is a 200-point grid followed
    by golden-section refinement around the best grid point.
    """
    active = weights > 0
    if not np.any(h_obs[active] != 0):
        return 0.0
    lo, hi = epsilon_domain(h_all)
    if not lo < hi:
        _warn("empty range for the mediator fluctuation; step skipped", EmptyEpsilonRange)
        return 0.0
    hw, ww = h_obs[active], weights[active]

    def risk(e):
        v = 1.0 + e * hw
        if np.any(v <= 0):
            return math.inf
        return -float(np.sum(ww * np.log(v)))

    grid = np.linspace(lo, hi, GRID_POINTS + 2)[1:-1]
    values = np.array([risk(e) for e in grid])
    k = int(np.argmin(values))
    left = grid[k - 1] if k > 0 else lo + 1e-12 * (hi - lo)
    right = grid[k + 1] if k < grid.size - 1 else hi - 1e-12 * (hi - lo)
    eps = _golden(risk, left, right)
    return eps if risk(eps) <= risk(0.0) else 0.0


# ---------------------------------------------------------------------------
# one-step


def onestep_density_rows(rows: DensityRows, folds: Optional[np.ndarray] = None) -> EstimateResult:
    theta = rows.theta()
    plug = density_eif(rows, 0.0)
    correction = plug.phi_y + plug.phi_m + plug.phi_a
    psi = fold_mean(theta + correction, folds)
    eif = density_eif(rows, psi)
    return wald(psi, eif, score_residuals=eif.means(), converged=True)


def onestep_ratio_rows(rows: RatioRows, folds: Optional[np.ndarray] = None) -> EstimateResult:
    plug = ratio_eif(rows, 0.0)
    correction = plug.phi_y + plug.phi_m + plug.phi_a
    psi = fold_mean(rows.gamma + correction, folds)
    eif = ratio_eif(rows, psi)
    return wald(psi, eif, score_residuals=eif.means(), converged=True)


def plugin_density_rows(rows: DensityRows, folds: Optional[np.ndarray] = None) -> EstimateResult:
    psi = fold_mean(rows.theta(), folds)
    eif = density_eif(rows, psi)
    return wald(psi, eif, score_residuals=eif.means(), converged=True)


def plugin_ratio_rows(rows: RatioRows, folds: Optional[np.ndarray] = None) -> EstimateResult:
    psi = fold_mean(rows.gamma, folds)
    eif = ratio_eif(rows, psi)
    return wald(psi, eif, score_residuals=eif.means(), converged=True)


def onestep_psi1(nset: NuisanceSetDensity, data: Dataset, a0: int, cfg: Optional[EstimatorConfig] = None):
    return onestep_density_rows(evaluate_density(nset, data, a0))


def onestep_psi2(nset: NuisanceSetRatio, data: Dataset, a0: int, cfg: Optional[EstimatorConfig] = None):
    if nset.a0 != a0:
        raise ValueError(f"ratio nuisances were fit for a0={nset.a0}, not {a0}")
    return onestep_ratio_rows(evaluate_ratio(nset, data))


# ---------------------------------------------------------------------------
# density-parameterization targeting


def _density_scores(rows: DensityRows, folds) -> dict:
    eif = density_eif(rows, fold_mean(rows.theta(), folds))
    return eif.means()


def _update_propensity(rows: DensityRows) -> tuple[DensityRows, float]:
    h = rows.eta(1) - rows.eta(0)
    eps = logistic_epsilon(rows.a.astype(float), rows.pi1, h, label="treatment")
    if eps != 0.0:
        rows = rows.replace(pi1=logistic_submodel(rows.pi1, h, eps))
    return rows, eps


def _update_binary_mediator(rows: DensityRows) -> tuple[DensityRows, float]:
    xi = rows.xi_grid()
    h = (xi[:, 1] - xi[:, 0]) / rows.pi_a0
    p1 = rows.f1_a0()
    eps = logistic_epsilon(rows.m, p1, h, weights=rows.is_a0, label="mediator")
    if eps != 0.0:
        rows = rows.with_f1_a0(logistic_submodel(p1, h, eps))
    return rows, eps


def _update_continuous_mediator(rows: DensityRows) -> tuple[DensityRows, float]:
    theta = rows.theta()
    pia0 = rows.pi_a0
    h_obs = (rows.xi_obs() - theta) / pia0
    h_grid = (rows.xi_grid() - theta[:, None]) / pia0[:, None]
    eps = multiplicative_epsilon(h_obs, rows.is_a0, np.concatenate([h_obs, h_grid.ravel()]))
    if eps != 0.0:
        rows = rows.replace(
            f_grid=multiplicative_submodel(rows.f_grid, h_grid, eps),
            f_a0_obs=multiplicative_submodel(rows.f_a0_obs, h_obs, eps),
        )
    return rows, eps


def _outcome_ratio_grid(rows: DensityRows) -> np.ndarray:
    """f(m | a0, X) / f(m | a, X) on the binary support, shape (n, 2, 2) indexed [i, m, a]."""
    r = np.ones(rows.mu_grid.shape)
    r[:, :, 1 - rows.a0] = rows.f_grid / np.maximum(rows.f_other_grid, 1e-300)
    return r


def _update_outcome_shift(rows: DensityRows) -> tuple[DensityRows, float]:
    eps = intercept_epsilon(rows.y, rows.mu_at_a(), rows.ratio_obs())
    if eps != 0.0:
        rows = rows.replace(mu_grid=shift_submodel(rows.mu_grid, eps), mu_obs=shift_submodel(rows.mu_obs, eps))
    return rows, eps


def _update_outcome_logistic(rows: DensityRows) -> tuple[DensityRows, float]:
    r_obs = rows.ratio_obs()
    eps = logistic_epsilon(rows.y, rows.mu_at_a(), r_obs, label="outcome")
    if eps != 0.0:
        r_cf = np.ones(rows.mu_obs.shape)
        r_cf[:, 1 - rows.a0] = rows.f_a0_obs / np.maximum(rows.f_other_obs, 1e-300)
        rows = rows.replace(
            mu_grid=logistic_submodel(rows.mu_grid, _outcome_ratio_grid(rows), eps),
            mu_obs=logistic_submodel(rows.mu_obs, r_cf, eps),
        )
    return rows, eps


def _targeting_loop(rows: DensityRows, cfg: EstimatorConfig, folds, steps: list, components: tuple):
    """Run the update ``steps`` in order until every listed score is below C_n."""
    tol = cfg.score_tolerance(rows.n)
    history = []
    scores = _density_scores(rows, folds)
    t = 0
    while max(abs(scores[c]) for c in components) > tol and t < cfg.max_tmle_iter:
        record = {}
        for name, step in steps:
            rows, record[name] = step(rows)
        t += 1
        history.append(record)
        scores = _density_scores(rows, folds)
        # every step is stuck (separation or rounding noise): further sweeps cannot move the scores
        if all(abs(v) <= STALL_EPSILON for v in record.values()):
            break
    converged = max(abs(scores[c]) for c in components) <= tol
    if not converged:
        _warn(f"targeting stopped after {t} iterations with max score {max(abs(scores[c]) for c in components):.3g} "
              f"above tolerance {tol:.3g}", MaxIterationsExceeded)
    return rows, history, t, converged


def _finish_density(rows: DensityRows, folds, history, t, converged) -> EstimateResult:
    psi = fold_mean(rows.theta(), folds)
    eif = density_eif(rows, psi)
    return wald(psi, eif, score_residuals=eif.means(), epsilon_history=history, iterations=t, converged=converged)


def target_density_binary(rows: DensityRows, cfg: EstimatorConfig, folds=None) -> EstimateResult:
    """Binary mediator, continuous outcome: iterate (pi, f_M), then one outcome shift."""
    if not rows.binary_m:
        raise UnsupportedKind("this targeting loop needs a binary mediator")
    steps = [("A", _update_propensity), ("M", _update_binary_mediator)]
    rows, history, t, converged = _targeting_loop(rows, cfg, folds, steps, ("A", "M"))
    rows, eps_y = _update_outcome_shift(rows)
    history.append({"Y": eps_y})
    return _finish_density(rows, folds, history, t, converged)


def target_density_continuous(rows: DensityRows, cfg: EstimatorConfig, folds=None) -> EstimateResult:
    """Continuous mediator: multiplicative density fluctuation with quadrature for theta and eta."""
    if rows.binary_m:
        raise UnsupportedKind("this targeting loop needs a continuous mediator")
    steps = [("A", _update_propensity), ("M", _update_continuous_mediator)]
    rows, history, t, converged = _targeting_loop(rows, cfg, folds, steps, ("A", "M"))
    rows, eps_y = _update_outcome_shift(rows)
    history.append({"Y": eps_y})
    return _finish_density(rows, folds, history, t, converged)


def target_density_binary_y(rows: DensityRows, cfg: EstimatorConfig, folds=None) -> EstimateResult:
    """Binary mediator and outcome: three-way iteration with a logistic outcome fluctuation."""
    if not rows.binary_m:
        raise UnsupportedKind("binary-outcome targeting needs a binary mediator")
    if np.any((rows.y != 0) & (rows.y != 1)):
        raise UnsupportedKind("binary-outcome targeting needs a 0/1 outcome")
    steps = [("A", _update_propensity), ("M", _update_binary_mediator), ("Y", _update_outcome_logistic)]
    rows, history, t, converged = _targeting_loop(rows, cfg, folds, steps, ("A", "M", "Y"))
    return _finish_density(rows, folds, history, t, converged)


def target_density_mod(rows: DensityRows, cfg: EstimatorConfig, folds=None, binary_y: bool = False) -> EstimateResult:
    """Single mediator update then single outcome update; averages over the empirical (A, X) law."""
    if not rows.binary_m:
        raise UnsupportedKind("the modified targeted estimator needs a binary mediator")
    rows, eps_m = _update_binary_mediator(rows)
    rows, eps_y = (_update_outcome_logistic if binary_y else _update_outcome_shift)(rows)
    eta_obs = np.where(rows.a == 1, rows.eta(1), rows.eta(0))
    psi = fold_mean(eta_obs, folds)
    eif = density_eif(rows, psi)
    return wald(psi, eif, score_residuals=eif.means(), epsilon_history=[{"M": eps_m, "Y": eps_y}],
                iterations=1, converged=True)


def _binary_outcome(cfg) -> bool:
    return cfg is not None and cfg.outcome_kind is OutcomeKind.BINARY


def tmle_psi1_binary_m(nset: NuisanceSetDensity, data: Dataset, a0: int, cfg: EstimatorConfig) -> EstimateResult:
    return target_density_binary(evaluate_density(nset, data, a0), cfg)


def tmle_psi1_continuous_m(nset: NuisanceSetDensity, data: Dataset, a0: int, cfg: EstimatorConfig) -> EstimateResult:
    return target_density_continuous(evaluate_density(nset, data, a0), cfg)


def tmle_psi1_binary_y(nset: NuisanceSetDensity, data: Dataset, a0: int, cfg: EstimatorConfig) -> EstimateResult:
    return target_density_binary_y(evaluate_density(nset, data, a0), cfg)


def tmle_psi1_mod(nset: NuisanceSetDensity, data: Dataset, a0: int, cfg: EstimatorConfig) -> EstimateResult:
    return target_density_mod(evaluate_density(nset, data, a0), cfg, binary_y=_binary_outcome(cfg))


def target_density(rows: DensityRows, cfg: EstimatorConfig, folds=None) -> EstimateResult:
    """Pick the targeting loop matching the mediator and outcome types."""
    if _binary_outcome(cfg):
        return target_density_binary_y(rows, cfg, folds)
    if rows.binary_m:
        return target_density_binary(rows, cfg, folds)
    return target_density_continuous(rows, cfg, folds)


# ---------------------------------------------------------------------------
# ratio-parameterization targeting


def fluctuate_outcome_treatment(rows: RatioRows, eps_y: float, eps_a: float, binary_y: bool) -> RatioRows:
    """Apply the outcome and treatment submodels with given coefficients."""
    if binary_y:
        mu_obs = logistic_submodel(rows.mu_obs, rows.ratio_cf, eps_y) if eps_y else rows.mu_obs
    else:
        mu_obs = shift_submodel(rows.mu_obs, eps_y)
    h_a = rows.kappa[:, 1] - rows.kappa[:, 0]
    pi1 = logistic_submodel(rows.pi1, h_a, eps_a) if eps_a else rows.pi1
    return rows.replace(mu_obs=mu_obs, pi1=pi1)


class GammaRefit:
    """Refits gamma on targeted pseudo-outcomes, training rows only, predicting on evaluation rows.

    ``parts`` holds one ``(eval_index, train_rows, train_x, eval_x)`` tuple per
    fold; without cross-fitting there is a single part covering all rows.
    """

    def __init__(self, parts: list, terms: str, n: int, binary_y: bool):
        self.parts, self.terms, self.n, self.binary_y = parts, terms, n, binary_y

    def __call__(self, eps_y: float, eps_a: float) -> np.ndarray:
        gamma = np.empty(self.n)
        for idx, train_rows, train_x, eval_x in self.parts:
            tr = fluctuate_outcome_treatment(train_rows, eps_y, eps_a, self.binary_y)
            arm = tr.a == tr.a0
            reg = CovariateRegression.fit_rows(train_x[arm], tr.xi_obs()[arm], self.terms)
            gamma[idx] = reg.predict(eval_x)
        return gamma


def target_ratio(rows: RatioRows, cfg: EstimatorConfig, folds=None,
                 refit: Optional[Callable] = None) -> EstimateResult:
    """One pass: outcome and treatment fluctuations, gamma refit, then the gamma shift."""
    binary_y = _binary_outcome(cfg)
    if binary_y:
        if rows.ratio_cf is None:
            raise UnsupportedKind("binary-outcome targeting needs ratios at both treatment levels")
        eps_y = logistic_epsilon(rows.y, rows.mu_at_a(), rows.ratio, label="outcome")
    else:
        eps_y = intercept_epsilon(rows.y, rows.mu_at_a(), rows.ratio)
    h_a = rows.kappa[:, 1] - rows.kappa[:, 0]
    eps_a = logistic_epsilon(rows.a.astype(float), rows.pi1, h_a, label="treatment")
    rows = fluctuate_outcome_treatment(rows, eps_y, eps_a, binary_y)
    if refit is not None:
        rows = rows.replace(gamma=refit(eps_y, eps_a))
    w = rows.is_a0 / rows.pi_a0
    eps_g = intercept_epsilon(rows.xi_obs(), rows.gamma, w)
    rows = rows.replace(gamma=shift_submodel(rows.gamma, eps_g))
    psi = fold_mean(rows.gamma, folds)
    eif = ratio_eif(rows, psi)
    return wald(psi, eif, score_residuals=eif.means(),
                epsilon_history=[{"Y": eps_y, "A": eps_a, "gamma": eps_g}], iterations=1, converged=True)


def tmle_psi2(nset: NuisanceSetRatio, data: Dataset, a0: int, cfg: EstimatorConfig) -> EstimateResult:
    if nset.a0 != a0:
        raise ValueError(f"ratio nuisances were fit for a0={nset.a0}, not {a0}")
    binary_y = _binary_outcome(cfg)
    rows = evaluate_ratio(nset, data, with_counterfactual=binary_y)
    refit = GammaRefit([(np.arange(data.n), rows, data.x, data.x)], nset.sequential_terms, data.n, binary_y)
    return target_ratio(rows, cfg, refit=refit)
