"""Front-door adjustment estimators: plug-in, one-step and targeted minimum-loss."""

from .api import estimate
from .data import Dataset, Estimator, EstimatorConfig, MediatorKind, OutcomeKind, Schema, load_csv, split_folds, write_csv
from .eif import EstimateResult, ace, wald
from .nuisance import LearnerSpec

__version__ = "0.1.0"
