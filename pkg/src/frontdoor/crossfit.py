"""K-fold cross-fitted one-step and targeted estimators.

Row i is always scored with nuisances trained on the folds other than its
own. Targeting steps fit a single coefficient on the stacked rows of all
folds, each row carrying its own fold's offsets and clever covariates.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import Dataset, EstimatorConfig, OutcomeKind, split_folds
from .density import RatioKind
from .eif import EstimateResult
from .errors import ValidationError
from .estimators import (
    GammaRefit,
    onestep_density_rows,
    onestep_ratio_rows,
    target_density,
    target_ratio,
)
from .nuisance import (
    LearnerSpec,
    evaluate_density,
    evaluate_ratio,
    fit_density_set,
    fit_ratio_set,
    stack_rows,
)


class Family(str, enum.Enum):
    PSI1 = "psi1"
    PSI2A = "psi2a"
    PSI2B = "psi2b"


@dataclass
class FoldedNuisances:
    """Per-fold nuisance sets; ``sets[k - 1]`` was trained on rows with ``folds != k``."""

    folds: np.ndarray
    sets: list

    @property
    def k(self) -> int:
        return len(self.sets)

    def eval_index(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.folds == k)

    def train_index(self, k: int) -> np.ndarray:
        if self.k == 1:
            return np.arange(self.folds.shape[0])
        return np.flatnonzero(self.folds != k)


def _ratio_kind(family: Family, ratio_values) -> RatioKind:
    if family is Family.PSI2B:
        return RatioKind.BAYES
    return RatioKind.PLUGGED if ratio_values is not None else RatioKind.FROM_DENSITY


def fit_folded(data: Dataset, cfg: EstimatorConfig, learner: LearnerSpec, family, folds: np.ndarray,
               a0: Optional[int] = None, ratio_values: Optional[np.ndarray] = None) -> FoldedNuisances:
    """Fit one nuisance set per fold. Ratio-family sets depend on ``a0``."""
    family = Family(family)
    labels = np.unique(folds)
    sets = []
    for k in labels:
        train = np.flatnonzero(folds != k) if labels.size > 1 else np.arange(data.n)
        tdata = data.subset(train)
        if family is Family.PSI1:
            sets.append(fit_density_set(tdata, cfg, learner))
        else:
            kcfg = dataclasses.replace(cfg, a0=cfg.a0 if a0 is None else a0)
            # plugged ratios are per-row values for the rows being scored
            plugged = None if ratio_values is None else ratio_values[folds == k]
            sets.append(fit_ratio_set(tdata, kcfg, learner, _ratio_kind(family, ratio_values), plugged=plugged))
    return FoldedNuisances(folds=folds, sets=sets)


def _fold_labels(folded: FoldedNuisances) -> np.ndarray:
    return np.unique(folded.folds)


def stacked_density_rows(folded: FoldedNuisances, data: Dataset, a0: int):
    labels = _fold_labels(folded)
    idx = [folded.eval_index(k) for k in labels]
    parts = [evaluate_density(s, data.subset(ix), a0) for s, ix in zip(folded.sets, idx)]
    return stack_rows(parts, idx)


def stacked_ratio_rows(folded: FoldedNuisances, data: Dataset, with_counterfactual: bool = False):
    labels = _fold_labels(folded)
    idx = [folded.eval_index(k) for k in labels]
    parts = [evaluate_ratio(s, data.subset(ix), with_counterfactual) for s, ix in zip(folded.sets, idx)]
    return stack_rows(parts, idx)


def _prepare(data, cfg, family, learner, folded, a0, ratio_values):
    if folded is None:
        if cfg.crossfit_folds < 2:
            raise ValidationError("cross-fitting needs crossfit_folds >= 2")
        folds = split_folds(data.n, cfg.crossfit_folds, cfg.seed)
        folded = fit_folded(data, cfg, learner or LearnerSpec(), family, folds, a0, ratio_values)
    return folded


def _fold_vector(folded: FoldedNuisances):
    return folded.folds if folded.k > 1 else None


def crossfit_onestep(data: Dataset, a0: int, cfg: EstimatorConfig, family, learner: Optional[LearnerSpec] = None,
                     folded: Optional[FoldedNuisances] = None,
                     ratio_values: Optional[np.ndarray] = None) -> EstimateResult:
    """Average of per-fold one-step estimates; SE from the pooled cross-fitted influence values."""
    family = Family(family)
    folded = _prepare(data, cfg, family, learner, folded, a0, ratio_values)
    if family is Family.PSI1:
        return onestep_density_rows(stacked_density_rows(folded, data, a0), _fold_vector(folded))
    return onestep_ratio_rows(stacked_ratio_rows(folded, data), _fold_vector(folded))


def crossfit_tmle(data: Dataset, a0: int, cfg: EstimatorConfig, family, learner: Optional[LearnerSpec] = None,
                  folded: Optional[FoldedNuisances] = None,
                  ratio_values: Optional[np.ndarray] = None) -> EstimateResult:
    """Targeted estimate with one shared fluctuation coefficient per step across all folds."""
    family = Family(family)
    folded = _prepare(data, cfg, family, learner, folded, a0, ratio_values)
    folds = _fold_vector(folded)
    if family is Family.PSI1:
        return target_density(stacked_density_rows(folded, data, a0), cfg, folds)
    binary_y = cfg.outcome_kind is OutcomeKind.BINARY
    rows = stacked_ratio_rows(folded, data, binary_y)
    parts = []
    for k, nset in zip(_fold_labels(folded), folded.sets):
        train = folded.train_index(k)
        tdata = data.subset(train)
        parts.append((folded.eval_index(k), evaluate_ratio(nset, tdata, binary_y, with_ratio=False), tdata.x,
                      data.x[folded.eval_index(k)]))
    refit = GammaRefit(parts, folded.sets[0].sequential_terms, data.n, binary_y)
    return target_ratio(rows, cfg, folds, refit)
