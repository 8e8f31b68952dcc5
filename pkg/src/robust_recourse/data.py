"""Tabular ingestion, standardization, class balancing, and stratified splits.

Conventions used throughout the package:
  * the design matrix is float64, one column per FeatureSpec entry,
  * categorical CSV columns are one-hot expanded into member columns that share
    a group id,
  * standardization uses the population standard deviation (ddof=0) fit on the
    rows it was asked to fit on, and touches continuous columns only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import pandas as pd

CONTINUOUS = "continuous"
BINARY = "binary"
CATEGORICAL = "categorical"


class SchemaError(ValueError):
    """Schema/CSV mismatch (missing column, bad kind, bad bounds)."""


class ParseError(ValueError):
    """Non-numeric value in a continuous column; carries the row index."""


class DegenerateFeatureError(ValueError):
    """A continuous column has zero variance on the scaler's fit rows."""


class ConfigurationError(ValueError):
    """Split plan incompatible with the dataset (too few rows, bad fractions)."""


@dataclass(frozen=True)
class FeatureSpec:
    """One column of the design matrix, or one raw CSV column before expansion.

    ``change_cost`` is the per-feature weight used by the mixed distance.
    ``fill`` replaces missing values; when None, rows with a missing value in
    this column are dropped.
    """

    name: str
    kind: str = CONTINUOUS
    immutable: bool = False
    lower: Optional[float] = None
    upper: Optional[float] = None
    change_cost: float = 1.0
    group: Optional[str] = None
    group_index: Optional[int] = None
    fill: Optional[float] = None

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, BINARY, CATEGORICAL):
            raise SchemaError(f"unknown feature kind {self.kind!r} for column {self.name!r}")
        if self.lower is not None and self.upper is not None and self.lower > self.upper:
            raise SchemaError(f"lower bound exceeds upper bound for column {self.name!r}")

    def to_dict(self):
        return {
            "name": self.name, "kind": self.kind, "immutable": self.immutable,
            "lower": self.lower, "upper": self.upper, "change_cost": self.change_cost,
            "group": self.group, "group_index": self.group_index, "fill": self.fill,
        }

    @staticmethod
    def from_dict(d):
        return FeatureSpec(**{k: d.get(k) for k in (
            "name", "kind", "immutable", "lower", "upper", "change_cost",
            "group", "group_index", "fill") if d.get(k) is not None or k in d})


@dataclass(frozen=True)
class Scaler:
    """Per-column standardizer for continuous features (population stddev, ddof=0)."""

    columns: tuple
    mean: np.ndarray
    std: np.ndarray

    def transform(self, X):
        Z = np.array(X, dtype=float, copy=True)
        cols = list(self.columns)
        Z[:, cols] = (Z[:, cols] - self.mean) / self.std
        return Z

    def inverse(self, X):
        Z = np.array(X, dtype=float, copy=True)
        cols = list(self.columns)
        Z[:, cols] = Z[:, cols] * self.std + self.mean
        return Z

    def to_dict(self):
        return {"columns": list(self.columns),
                "mean": self.mean.tolist(), "std": self.std.tolist()}


@dataclass
class Dataset:
    """Feature matrix + binary labels + per-column metadata."""

    X: np.ndarray
    y: np.ndarray
    specs: list
    scaler: Optional[Scaler] = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    def continuous_indices(self):
        return [j for j, s in enumerate(self.specs) if s.kind == CONTINUOUS]

    def groups(self):
        """Mapping group id -> member column indices, in column order."""
        out = {}
        for j, s in enumerate(self.specs):
            if s.group is not None:
                out.setdefault(s.group, []).append(j)
        return out

    def immutable_mask(self):
        return np.array([s.immutable for s in self.specs], dtype=bool)

    def subset(self, rows):
        rows = np.asarray(rows)
        return Dataset(self.X[rows], self.y[rows], self.specs, self.scaler, dict(self.meta))

    def class_counts(self):
        return {int(c): int((self.y == c).sum()) for c in (0, 1)}


@dataclass(frozen=True)
class SplitPlan:
    fold_count: int = 4
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.val_fraction < 1.0):
            raise ConfigurationError("val_fraction must be in (0, 1)")
        if self.fold_count < 2:
            raise ConfigurationError("fold_count must be >= 2")


def schema_to_json(specs):
    return json.dumps([s.to_dict() for s in specs], indent=2)


def schema_from_json(text):
    return [FeatureSpec.from_dict(d) for d in json.loads(text)]


def load_csv(path, schema, label="label"):
    """Load a CSV against a raw-column schema, one-hot expanding categoricals.

    Rows with a missing value in a column whose spec has no fill value are
    dropped (count reported in ``meta["rows_dropped"]``). Missing values in
    columns with a fill value are replaced. Category levels are the sorted
    distinct observed values; member columns are named ``col=level``.
    """
    return load_frame(pd.read_csv(path), schema, label=label)


def load_frame(df, schema, label="label"):
    """Same contract as load_csv for an in-memory DataFrame."""
    df = df.copy()
    names = [s.name for s in schema]
    missing_cols = [n for n in names if n not in df.columns]
    if missing_cols:
        raise SchemaError(f"CSV is missing schema columns {missing_cols}")
    if label not in df.columns:
        raise SchemaError(f"CSV is missing the label column {label!r}")

    for s in schema:
        if s.kind in (CONTINUOUS, BINARY):
            raw = df[s.name]
            converted = pd.to_numeric(raw, errors="coerce")
            bad = converted.isna() & raw.notna()
            if bad.any():
                row = int(np.where(bad.to_numpy())[0][0])
                raise ParseError(
                    f"non-numeric value {raw.iloc[row]!r} in column {s.name!r} at row {row}")
            df[s.name] = converted
        if s.fill is not None:
            df[s.name] = df[s.name].fillna(s.fill)

    required = [s.name for s in schema if s.fill is None] + [label]
    keep = df[required].notna().all(axis=1)
    dropped = int((~keep).sum())
    df = df.loc[keep].reset_index(drop=True)

    y = pd.to_numeric(df[label], errors="coerce").to_numpy()
    if not np.isin(y, (0, 1)).all():
        raise SchemaError("label column must be binary 0/1")
    y = y.astype(np.int64)

    columns, specs = [], []
    for s in schema:
        if s.kind == CATEGORICAL:
            levels = sorted(df[s.name].astype(str).unique())
            if len(levels) < 2:
                raise SchemaError(f"categorical column {s.name!r} has fewer than 2 levels")
            for k, level in enumerate(levels):
                columns.append((df[s.name].astype(str) == level).to_numpy(dtype=float))
                specs.append(replace(s, name=f"{s.name}={level}", kind=BINARY,
                                     group=s.name, group_index=k,
                                     lower=None, upper=None, fill=None))
        else:
            columns.append(df[s.name].to_numpy(dtype=float))
            specs.append(s)

    X = np.column_stack(columns) if columns else np.empty((len(df), 0))
    return Dataset(X=X, y=y, specs=specs, meta={"rows_dropped": dropped})


def balance_classes(ds, seed=0):
    """Under-sample the majority class uniformly at random; row order preserved."""
    rng = np.random.default_rng(seed)
    idx0 = np.where(ds.y == 0)[0]
    idx1 = np.where(ds.y == 1)[0]
    minority, majority = (idx0, idx1) if len(idx0) <= len(idx1) else (idx1, idx0)
    kept_major = rng.choice(majority, size=len(minority), replace=False)
    keep = np.sort(np.concatenate([minority, kept_major]))
    out = ds.subset(keep)
    out.meta["balanced_from"] = int(ds.n)
    return out


def preprocess(ds, fit_rows, balance=True, seed=0):
    """Standardize continuous columns (parameters fit on ``fit_rows`` only) and
    optionally balance classes by seeded under-sampling.

    One-hot and binary columns are left untouched. Raises
    DegenerateFeatureError if any continuous column has zero variance on the
    fit rows.
    """
    fit_rows = np.asarray(fit_rows)
    if fit_rows.size == 0:
        raise ConfigurationError("fit_rows must be non-empty")
    cols = ds.continuous_indices()
    if cols:
        sub = ds.X[np.ix_(fit_rows, cols)]
        mean = sub.mean(axis=0)
        std = sub.std(axis=0)  # population convention, ddof=0
        for j, s in zip(cols, std):
            if s <= 0.0:
                raise DegenerateFeatureError(
                    f"continuous column {ds.specs[j].name!r} has zero variance on fit rows")
        scaler = Scaler(columns=tuple(cols), mean=mean, std=std)
        X = scaler.transform(ds.X)
    else:
        scaler = Scaler(columns=(), mean=np.empty(0), std=np.empty(0))
        X = ds.X.copy()

    out = Dataset(X=X, y=ds.y.copy(), specs=ds.specs, scaler=scaler, meta=dict(ds.meta))
    if balance:
        out = balance_classes(out, seed=seed)
    out.meta.update({
        "scaler": scaler.to_dict(),
        "class_counts": out.class_counts(),
    })
    return out


def preprocessing_report(ds):
    """JSON report: rows dropped at load, scaler parameters, class counts."""
    return json.dumps({
        "rows_dropped": ds.meta.get("rows_dropped", 0),
        "scaler": ds.scaler.to_dict() if ds.scaler is not None else None,
        "class_counts": ds.class_counts(),
        "n": ds.n,
        "d": ds.d,
    }, indent=2)


def _chunk_sizes(count, folds, flip):
    base, rem = divmod(count, folds)
    sizes = [base + 1 if i < rem else base for i in range(folds)]
    # opposite remainder placement per class keeps fold sizes as even as possible
    return sizes[::-1] if flip else sizes


def stratified_folds(ds, plan):
    """Stratified K-fold plan: list of (train, val, test) index arrays.

    Test sets partition the rows. Per fold, the remaining rows are split into
    train/val per class: val gets floor(val_fraction * per-class count), the
    remainder goes to train. Deterministic under the plan seed.
    """
    if ds.n < 2 * plan.fold_count:
        raise ConfigurationError(
            f"need at least {2 * plan.fold_count} rows for {plan.fold_count} folds, have {ds.n}")
    rng = np.random.default_rng(plan.seed)

    test_sets = [[] for _ in range(plan.fold_count)]
    rest_sets = [[[] for _ in range(plan.fold_count)] for _ in (0, 1)]
    for c in (0, 1):
        idx = np.where(ds.y == c)[0]
        rng.shuffle(idx)
        sizes = _chunk_sizes(len(idx), plan.fold_count, flip=(c == 1))
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        for f in range(plan.fold_count):
            chunk = idx[offsets[f]:offsets[f + 1]]
            test_sets[f].extend(chunk.tolist())
            for g in range(plan.fold_count):
                if g != f:
                    rest_sets[c][g].extend(chunk.tolist())

    folds = []
    for f in range(plan.fold_count):
        train, val = [], []
        for c in (0, 1):
            rest = np.array(sorted(rest_sets[c][f]))
            rng_f = np.random.default_rng((plan.seed, f, c))
            rng_f.shuffle(rest)
            n_val = int(np.floor(plan.val_fraction * len(rest)))
            val.extend(rest[:n_val].tolist())
            train.extend(rest[n_val:].tolist())
        folds.append((np.sort(np.array(train, dtype=np.int64)),
                      np.sort(np.array(val, dtype=np.int64)),
                      np.sort(np.array(test_sets[f], dtype=np.int64))))
    return folds
