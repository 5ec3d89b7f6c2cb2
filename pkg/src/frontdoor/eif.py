"""Plug-in functionals, the efficient influence function, and Wald inference."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import norm

from .data import Dataset
from .errors import RowMismatch
from .nuisance import (
    DensityRows,
    NuisanceSetDensity,
    NuisanceSetRatio,
    RatioRows,
    evaluate_density,
    evaluate_ratio,
)


@dataclass(frozen=True)
class EifDecomposition:
    """Per-row influence-function components and their sum."""

    phi_y: np.ndarray
    phi_m: np.ndarray
    phi_a: np.ndarray
    phi_x: np.ndarray
    total: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "total", self.phi_y + self.phi_m + self.phi_a + self.phi_x)

    def means(self) -> dict:
        return {
            "Y": float(np.mean(self.phi_y)),
            "M": float(np.mean(self.phi_m)),
            "A": float(np.mean(self.phi_a)),
            "X": float(np.mean(self.phi_x)),
        }


@dataclass
class EstimateResult:
    psi: float
    se: float
    ci: tuple
    score_residuals: dict = field(default_factory=dict)
    epsilon_history: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = True
    influence: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return 0 if self.influence is None else int(self.influence.shape[0])

    def to_dict(self) -> dict:
        return {
            "psi": self.psi,
            "se": self.se,
            "ci": [self.ci[0], self.ci[1]],
            "diagnostics": {
                "iterations": self.iterations,
                "converged": self.converged,
                "epsilon_history": self.epsilon_history,
                "score_residuals": self.score_residuals,
            },
        }


def fold_mean(values: np.ndarray, folds: Optional[np.ndarray]) -> float:
    """Average of per-fold means (plain mean without folds)."""
    if folds is None:
        return float(np.mean(values))
    return float(np.mean([np.mean(values[folds == k]) for k in np.unique(folds)]))


def density_eif(rows: DensityRows, psi: float) -> EifDecomposition:
    phi_y = rows.ratio_obs() * (rows.y - rows.mu_at_a())
    phi_m = rows.is_a0 / rows.pi_a0 * (rows.xi_obs() - rows.theta())
    phi_a = (rows.eta(1) - rows.eta(0)) * (rows.a - rows.pi1)
    phi_x = rows.theta() - psi
    return EifDecomposition(phi_y, phi_m, phi_a, phi_x)


def binary_mediator_phi_m(rows: DensityRows) -> np.ndarray:
    """Mediator component rewritten for binary M: weight * (xi(1) - xi(0)) * (M - f(1 | a0, X))."""
    xi = rows.xi_grid()
    return rows.is_a0 / rows.pi_a0 * (xi[:, 1] - xi[:, 0]) * (rows.m - rows.f_grid[:, 1])


def ratio_eif(rows: RatioRows, psi: float) -> EifDecomposition:
    phi_y = rows.ratio * (rows.y - rows.mu_at_a())
    phi_m = rows.is_a0 / rows.pi_a0 * (rows.xi_obs() - rows.gamma)
    phi_a = (rows.kappa[:, 1] - rows.kappa[:, 0]) * (rows.a - rows.pi1)
    phi_x = rows.gamma - psi
    return EifDecomposition(phi_y, phi_m, phi_a, phi_x)


def plugin_psi1(nset: NuisanceSetDensity, data: Dataset, a0: int) -> float:
    return float(np.mean(evaluate_density(nset, data, a0).theta()))


def plugin_psi2(nset: NuisanceSetRatio, data: Dataset) -> float:
    return float(np.mean(nset.gamma.predict(data.x)))


def eif_density(nset: NuisanceSetDensity, data: Dataset, a0: int, psi: float) -> EifDecomposition:
    return density_eif(evaluate_density(nset, data, a0), psi)


def eif_ratio(nset: NuisanceSetRatio, data: Dataset, a0: int, psi: float) -> EifDecomposition:
    if nset.a0 != a0:
        raise ValueError(f"ratio nuisances were fit for a0={nset.a0}, not {a0}")
    return ratio_eif(evaluate_ratio(nset, data), psi)


def wald(psi: float, eif: EifDecomposition, level: float = 0.95, **diagnostics) -> EstimateResult:
    """Influence-function standard error sqrt(mean(phi^2) / n) and a symmetric normal interval."""
    return _wald_from_total(psi, eif.total, level, **diagnostics)


def _wald_from_total(psi, total, level=0.95, **diagnostics) -> EstimateResult:
    n = total.shape[0]
    se = float(np.sqrt(np.mean(total ** 2) / n))
    z = float(norm.ppf(0.5 + level / 2))
    psi = float(psi)
    return EstimateResult(psi=psi, se=se, ci=(psi - z * se, psi + z * se), influence=total, **diagnostics)


def ace(result_a1: EstimateResult, result_a0: EstimateResult, level: float = 0.95) -> EstimateResult:
    """Difference of two counterfactual means, with SE from the differenced influence values."""
    if result_a1.influence is None or result_a0.influence is None:
        raise RowMismatch("both results need per-row influence values")
    if result_a1.influence.shape != result_a0.influence.shape:
        raise RowMismatch(f"influence vectors have {result_a1.n} and {result_a0.n} rows")
    diag = {
        "score_residuals": {"a0=1": result_a1.score_residuals, "a0=0": result_a0.score_residuals},
        "epsilon_history": {"a0=1": result_a1.epsilon_history, "a0=0": result_a0.epsilon_history},
        "iterations": result_a1.iterations + result_a0.iterations,
        "converged": result_a1.converged and result_a0.converged,
    }
    return _wald_from_total(result_a1.psi - result_a0.psi, result_a1.influence - result_a0.influence, level, **diag)
