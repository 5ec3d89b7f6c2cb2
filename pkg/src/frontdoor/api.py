"""High-level entry point: fit nuisances, run one named estimator, optionally difference two levels."""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .crossfit import Family, FoldedNuisances, crossfit_tmle, fit_folded, stacked_density_rows, stacked_ratio_rows
from .data import Dataset, Estimator, EstimatorConfig, MediatorKind, OutcomeKind, split_folds
from .eif import EstimateResult, ace
from .errors import ValidationError
from .estimators import (
    onestep_density_rows,
    onestep_ratio_rows,
    plugin_density_rows,
    plugin_ratio_rows,
    target_density,
    target_density_mod,
)
from .nuisance import LearnerSpec

FAMILY = {
    Estimator.PLUGIN1: Family.PSI1,
    Estimator.ONESTEP1: Family.PSI1,
    Estimator.TMLE1: Family.PSI1,
    Estimator.TMLE1_MOD: Family.PSI1,
    Estimator.PLUGIN2: Family.PSI2B,
    Estimator.ONESTEP2A: Family.PSI2A,
    Estimator.TMLE2A: Family.PSI2A,
    Estimator.ONESTEP2B: Family.PSI2B,
    Estimator.TMLE2B: Family.PSI2B,
}


def validate(data: Dataset, cfg: EstimatorConfig, ratio_values=None, injected: bool = False) -> None:
    """Reject configurations that cannot run. ``injected`` means nuisances come from the caller."""
    cfg.check_mediator(data.mediator_kind)
    est = cfg.estimator
    if est in (Estimator.ONESTEP2A, Estimator.TMLE2A) and ratio_values is None and not injected \
            and data.mediator_kind is MediatorKind.MULTIVARIATE:
        raise ValidationError(f"{est.value} with a multivariate mediator needs --ratio-file; "
                              "alternatively use tmle-2b or onestep-2b")
    if cfg.outcome_kind is OutcomeKind.BINARY:
        if np.any((data.y != 0) & (data.y != 1)):
            raise ValidationError("binary outcome must be coded 0/1")
        if est in (Estimator.TMLE1, Estimator.TMLE1_MOD) and data.mediator_kind is not MediatorKind.BINARY:
            raise ValidationError(f"{est.value} with a binary outcome needs a binary mediator; use tmle-2b")
    for a0 in (0, 1):
        if not np.any(data.a == a0):
            raise ValidationError(f"no rows with A={a0}")


def run_on_folded(est: Estimator, folded: FoldedNuisances, data: Dataset, a0: int,
                  cfg: EstimatorConfig) -> EstimateResult:
    """Run estimator ``est`` for level ``a0`` given (possibly single-fold) nuisances."""
    folds = folded.folds if folded.k > 1 else None
    if FAMILY[est] is Family.PSI1:
        rows = stacked_density_rows(folded, data, a0)
        if est is Estimator.PLUGIN1:
            return plugin_density_rows(rows, folds)
        if est is Estimator.ONESTEP1:
            return onestep_density_rows(rows, folds)
        if est is Estimator.TMLE1_MOD:
            return target_density_mod(rows, cfg, folds, binary_y=cfg.outcome_kind is OutcomeKind.BINARY)
        return target_density(rows, cfg, folds)
    if est in (Estimator.TMLE2A, Estimator.TMLE2B):
        return crossfit_tmle(data, a0, cfg, FAMILY[est], folded=folded)
    rows = stacked_ratio_rows(folded, data)
    if est is Estimator.PLUGIN2:
        return plugin_ratio_rows(rows, folds)
    return onestep_ratio_rows(rows, folds)


NuisanceFactory = Callable[[Family, int, np.ndarray], FoldedNuisances]


def estimate(data: Dataset, cfg: EstimatorConfig, learner: Optional[LearnerSpec] = None,
             ratio_values: Optional[np.ndarray] = None, ace_effect: bool = False,
             nuisances: Optional[NuisanceFactory] = None) -> EstimateResult:
    """Estimate E[Y^{a0}] for ``cfg.a0``, or the effect E[Y^1] - E[Y^0] when ``ace_effect``.

    ``nuisances(family, a0, folds)`` may supply pre-built nuisance sets instead
    of fitting them (used to inject known nuisance functions).
    """
    validate(data, cfg, ratio_values, injected=nuisances is not None)
    learner = learner or LearnerSpec()
    est = cfg.estimator
    family = FAMILY[est]
    if cfg.crossfit_folds > 1:
        folds = split_folds(data.n, cfg.crossfit_folds, cfg.seed)
    else:
        folds = np.ones(data.n, dtype=np.int64)
    cache = {}

    def folded_for(a0):
        key = None if family is Family.PSI1 else a0
        if key not in cache:
            if nuisances is not None:
                cache[key] = nuisances(family, a0, folds)
            else:
                cache[key] = fit_folded(data, cfg, learner, family, folds, a0, ratio_values)
        return cache[key]

    if not ace_effect:
        return run_on_folded(est, folded_for(cfg.a0), data, cfg.a0, cfg)
    r1 = run_on_folded(est, folded_for(1), data, 1, cfg)
    r0 = run_on_folded(est, folded_for(0), data, 0, cfg)
    return ace(r1, r0)

