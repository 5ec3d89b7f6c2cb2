"""Observed-data container, CSV input/output and estimator configuration."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import (
    MissingColumn,
    NonBinaryTreatment,
    NonFiniteValue,
    TooManyFolds,
    ValidationError,
)


class MediatorKind(str, enum.Enum):
    BINARY = "binary"
    CONTINUOUS = "continuous"
    MULTIVARIATE = "multivariate"


class OutcomeKind(str, enum.Enum):
    CONTINUOUS = "continuous"
    BINARY = "binary"


class Estimator(str, enum.Enum):
    PLUGIN1 = "plugin-1"
    PLUGIN2 = "plugin-2"
    ONESTEP1 = "onestep-1"
    ONESTEP2A = "onestep-2a"
    ONESTEP2B = "onestep-2b"
    TMLE1 = "tmle-1"
    TMLE1_MOD = "tmle-1-mod"
    TMLE2A = "tmle-2a"
    TMLE2B = "tmle-2b"

    @property
    def uses_density(self) -> bool:
        return self in (Estimator.PLUGIN1, Estimator.ONESTEP1, Estimator.TMLE1, Estimator.TMLE1_MOD)


ESTIMATOR_NAMES = tuple(e.value for e in Estimator)


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Dataset:
    """Rows of (X, A, M, Y).

    ``x`` is (n, p), ``m`` is (n, d), ``a`` holds integer 0/1 and ``y`` is (n,).
    Arrays are stored read-only so a dataset can be shared freely.
    """

    x: np.ndarray
    a: np.ndarray
    m: np.ndarray
    y: np.ndarray
    mediator_kind: MediatorKind

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        m = np.asarray(self.m, dtype=float)
        if m.ndim == 1:
            m = m[:, None]
        a_raw = np.asarray(self.a, dtype=float).ravel()
        y = np.asarray(self.y, dtype=float).ravel()
        n = y.shape[0]
        if n < 1:
            raise ValidationError("dataset must have at least one row")
        for name, arr in (("x", x), ("a", a_raw), ("m", m)):
            if arr.shape[0] != n:
                raise ValidationError(f"column block {name!r} has {arr.shape[0]} rows, expected {n}")
        for name, arr in (("x", x), ("a", a_raw), ("m", m), ("y", y)):
            bad = ~np.isfinite(arr)
            if bad.any():
                row = int(np.argwhere(bad)[0][0])
                raise NonFiniteValue(f"non-finite value in {name!r} at row {row}")
        if not np.all((a_raw == 0) | (a_raw == 1)):
            row = int(np.flatnonzero((a_raw != 0) & (a_raw != 1))[0])
            raise NonBinaryTreatment(f"treatment must be 0/1; row {row} has {a_raw[row]!r}")
        kind = MediatorKind(self.mediator_kind)
        if kind is MediatorKind.BINARY:
            if m.shape[1] != 1 or not np.all((m == 0) | (m == 1)):
                raise ValidationError("binary mediator must be a single 0/1 column")
        elif kind is MediatorKind.CONTINUOUS and m.shape[1] != 1:
            raise ValidationError("continuous mediator must be a single column")
        object.__setattr__(self, "x", _readonly(x))
        object.__setattr__(self, "m", _readonly(m))
        object.__setattr__(self, "a", _readonly(a_raw.astype(np.int64)))
        object.__setattr__(self, "y", _readonly(y))
        object.__setattr__(self, "mediator_kind", kind)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def d(self) -> int:
        return self.m.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.x[rows], self.a[rows], self.m[rows], self.y[rows], self.mediator_kind)

    def with_y(self, y) -> "Dataset":
        return Dataset(self.x, self.a, self.m, y, self.mediator_kind)


def infer_mediator_kind(m: np.ndarray) -> MediatorKind:
    m = np.asarray(m, dtype=float)
    if m.ndim == 1:
        m = m[:, None]
    if m.shape[1] > 1:
        return MediatorKind.MULTIVARIATE
    if np.all((m == 0) | (m == 1)):
        return MediatorKind.BINARY
    return MediatorKind.CONTINUOUS


@dataclass(frozen=True)
class Schema:
    """Column roles for CSV input. ``mediator_kind=None`` means infer."""

    y: str
    a: str
    m: Sequence[str]
    x: Sequence[str]
    mediator_kind: Optional[MediatorKind] = None

    def columns(self) -> list[str]:
        return list(self.x) + [self.a] + list(self.m) + [self.y]


def load_csv(path, schema: Schema) -> Dataset:
    """Read a header-first CSV into a :class:`Dataset` using ``schema`` for column roles."""
    if not schema.m:
        raise ValidationError("at least one mediator column required")
    if not schema.x:
        raise ValidationError("at least one covariate column required")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    index = {name: j for j, name in enumerate(header)}
    for col in schema.columns():
        if col not in index:
            raise MissingColumn(f"column {col!r} not found in {path}")

    def column(name: str) -> np.ndarray:
        j = index[name]
        out = np.empty(len(rows))
        for i, r in enumerate(rows):
            try:
                v = float(r[j])
            except (ValueError, IndexError):
                raise NonFiniteValue(f"row {i + 1}, column {name!r}: cannot parse value") from None
            if not math.isfinite(v):
                raise NonFiniteValue(f"row {i + 1}, column {name!r}: non-finite value {r[j]!r}")
            out[i] = v
        return out

    a = column(schema.a)
    bad = np.flatnonzero((a != 0) & (a != 1))
    if bad.size:
        raise NonBinaryTreatment(f"row {bad[0] + 1}, column {schema.a!r}: treatment must be 0 or 1, got {a[bad[0]]!r}")
    x = np.column_stack([column(c) for c in schema.x])
    m = np.column_stack([column(c) for c in schema.m])
    y = column(schema.y)
    kind = schema.mediator_kind or infer_mediator_kind(m)
    return Dataset(x=x, a=a, m=m, y=y, mediator_kind=kind)


def default_schema(data: Dataset) -> Schema:
    xs = [f"X{j + 1}" for j in range(data.p)] if data.p > 1 else ["X"]
    ms = [f"M{j + 1}" for j in range(data.d)] if data.d > 1 else ["M"]
    return Schema(y="Y", a="A", m=ms, x=xs, mediator_kind=data.mediator_kind)


def write_csv(data: Dataset, path, schema: Optional[Schema] = None, extra: Optional[dict] = None) -> None:
    """Write ``data`` with full float precision; ``extra`` adds named per-row columns."""
    schema = schema or default_schema(data)
    extra = extra or {}
    header = list(schema.x) + [schema.a] + list(schema.m) + [schema.y] + list(extra)
    cols = [data.x[:, j] for j in range(data.p)] + [data.a] + [data.m[:, j] for j in range(data.d)] + [data.y]
    cols += [np.asarray(v) for v in extra.values()]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(data.n):
            w.writerow([repr(float(c[i])) if c is not data.a else str(int(c[i])) for c in cols])


def read_ratio_csv(path, n: int) -> np.ndarray:
    """Per-row density ratios from the ``fm_ratio`` column of a CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "fm_ratio" not in reader.fieldnames:
            raise MissingColumn(f"column 'fm_ratio' not found in {path}")
        vals = []
        for i, row in enumerate(reader):
            try:
                v = float(row["fm_ratio"])
            except (TypeError, ValueError):
                raise NonFiniteValue(f"row {i + 1}, column 'fm_ratio': cannot parse value") from None
            if not math.isfinite(v) or v <= 0:
                raise NonFiniteValue(f"row {i + 1}, column 'fm_ratio': ratio must be finite and positive")
            vals.append(v)
    if len(vals) != n:
        raise ValidationError(f"{path}: {len(vals)} ratio rows for {n} data rows")
    return np.asarray(vals)


def split_folds(n: int, k: int, seed: int) -> np.ndarray:
    """Balanced random fold labels in ``1..k``; sizes differ by at most one."""
    if k < 2:
        raise ValidationError("need at least 2 folds")
    if k > n:
        raise TooManyFolds(f"cannot split {n} rows into {k} folds")
    rng = np.random.Generator(np.random.Philox(seed))
    perm = rng.permutation(n)
    folds = np.empty(n, dtype=np.int64)
    folds[perm] = np.arange(n) % k + 1
    return folds


@dataclass
class EstimatorConfig:
    a0: int = 1
    estimator: Estimator = Estimator.TMLE1
    outcome_kind: OutcomeKind = OutcomeKind.CONTINUOUS
    crossfit_folds: int = 1
    seed: int = 0
    max_tmle_iter: int = 500
    score_tolerance_scale: float = 1.0
    prob_clip: float = 1e-3
    integration_grid_size: int = 200

    def __post_init__(self):
        self.estimator = Estimator(self.estimator)
        self.outcome_kind = OutcomeKind(self.outcome_kind)
        if self.a0 not in (0, 1):
            raise ValidationError("a0 must be 0 or 1")
        if self.crossfit_folds < 1:
            raise ValidationError("crossfit_folds must be >= 1")
        if not 0 < self.prob_clip < 0.5:
            raise ValidationError("prob_clip must lie in (0, 0.5)")
        if self.integration_grid_size < 3:
            raise ValidationError("integration_grid_size must be >= 3")

    def score_tolerance(self, n: int) -> float:
        return self.score_tolerance_scale / (math.sqrt(n) * math.log(n))

    def check_mediator(self, kind: MediatorKind) -> None:
        if self.estimator.uses_density and kind is MediatorKind.MULTIVARIATE:
            raise ValidationError(
                f"{self.estimator.value} needs a univariate mediator; use a ratio-based estimator (tmle-2b)"
            )
