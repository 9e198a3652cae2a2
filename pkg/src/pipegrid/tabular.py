"""Typed tabular data, CSV ingestion, stratified splits and meta-features."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

NUMERIC = "numeric"
CATEGORICAL = "categorical"

TASKS = ("classification", "regression")
METRICS = ("accuracy",)

METAFEATURE_NAMES = (
    "log_n_rows",
    "log_n_cols",
    "pct_numeric",
    "pct_categorical",
    "pct_missing",
    "mean_numeric_mean",
    "std_numeric_mean",
    "mean_numeric_std",
    "n_classes",
    "majority_class_ratio",
    "log_mean_cardinality",
    "pct_cols_with_missing",
)
N_METAFEATURES = len(METAFEATURE_NAMES)


class DataError(ValueError):
    """Raised for malformed input data (bad CSV, unusable target, tiny classes)."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Column:
    """One column. Numeric values are float64 with NaN at missing cells;
    categorical values are strings with "" at missing cells."""

    name: str
    kind: str
    values: np.ndarray
    missing: np.ndarray
    lineage: str

    def __post_init__(self):
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise ValueError(f"unknown column kind {self.kind!r}")
        if len(self.values) != len(self.missing):
            raise ValueError(f"column {self.name!r}: values/missing length mismatch")
        if self.values.flags.writeable:
            _frozen(self.values)
        if self.missing.flags.writeable:
            _frozen(self.missing)

    @classmethod
    def numeric(cls, name: str, values, lineage: str | None = None, missing=None) -> "Column":
        vals = np.array(values, dtype=np.float64)
        miss = np.isnan(vals) if missing is None else np.asarray(missing, dtype=bool).copy()
        vals = vals.copy()
        vals[miss] = np.nan
        return cls(name, NUMERIC, vals, miss, lineage or f"raw/{name}")

    @classmethod
    def categorical(cls, name: str, values, lineage: str | None = None, missing=None) -> "Column":
        vals = np.array(["" if v is None else str(v) for v in values], dtype=object)
        miss = (vals == "") if missing is None else np.asarray(missing, dtype=bool).copy()
        vals[miss] = ""
        return cls(name, CATEGORICAL, vals, miss.astype(bool), lineage or f"raw/{name}")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def is_numeric(self) -> bool:
        return self.kind == NUMERIC

    @cached_property
    def n_missing(self) -> int:
        return int(self.missing.sum())

    @property
    def has_missing(self) -> bool:
        return self.n_missing > 0

    @cached_property
    def present(self) -> np.ndarray:
        return self.values[~self.missing]

    @cached_property
    def has_negative(self) -> bool:
        return self.is_numeric and bool(np.any(self.present < 0))

    @cached_property
    def mean(self) -> float | None:
        if not self.is_numeric or len(self.present) == 0:
            return None
        return float(np.mean(self.present))

    @cached_property
    def std(self) -> float | None:
        if not self.is_numeric or len(self.present) == 0:
            return None
        return float(np.std(self.present))

    @cached_property
    def levels(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.present.tolist())))

    @cached_property
    def n_distinct(self) -> int:
        if self.is_numeric:
            return len(np.unique(self.present))
        return len(self.levels)

    def take(self, rows: np.ndarray) -> "Column":
        return Column(self.name, self.kind, self.values[rows], self.missing[rows], self.lineage)

    def equals(self, other: "Column") -> bool:
        if (self.name, self.kind, self.lineage) != (other.name, other.kind, other.lineage):
            return False
        if not np.array_equal(self.missing, other.missing):
            return False
        keep = ~self.missing
        if self.is_numeric:
            return bool(np.array_equal(self.values[keep], other.values[keep]))
        return self.values[keep].tolist() == other.values[keep].tolist()


@dataclass(frozen=True, eq=False)
class Table:
    columns: tuple[Column, ...]
    n_rows: int
    target: int | None = None
    classes: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        for col in self.columns:
            if len(col) != self.n_rows:
                raise ValueError(
                    f"column {col.name!r} has {len(col)} values, expected {self.n_rows}"
                )
        lineages = [c.lineage for c in self.columns]
        if len(set(lineages)) != len(lineages):
            raise ValueError("duplicate lineage ids in table")
        if self.target is not None:
            tcol = self.columns[self.target]
            if tcol.has_missing:
                raise DataError(f"target column {tcol.name!r} has missing values")
            if not self.classes:
                object.__setattr__(self, "classes", tcol.levels)
            else:
                unknown = set(tcol.levels) - set(self.classes)
                if unknown:
                    raise ValueError(f"target labels {sorted(unknown)} outside class list")

    @property
    def target_column(self) -> Column | None:
        return None if self.target is None else self.columns[self.target]

    @cached_property
    def features(self) -> tuple[Column, ...]:
        return tuple(c for i, c in enumerate(self.columns) if i != self.target)

    @property
    def n_features(self) -> int:
        return len(self.features)

    @cached_property
    def y(self) -> np.ndarray:
        """Target as integer class codes indexing ``classes``."""
        if self.target is None:
            raise ValueError("table has no target")
        lookup = {c: i for i, c in enumerate(self.classes)}
        return _frozen(np.array([lookup[v] for v in self.target_column.values], dtype=np.int64))

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @cached_property
    def feature_lineages(self) -> tuple[str, ...]:
        return tuple(c.lineage for c in self.features)

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)

    def take(self, rows) -> "Table":
        rows = np.asarray(rows, dtype=np.int64)
        return Table(tuple(c.take(rows) for c in self.columns), len(rows), self.target, self.classes)

    def with_features(self, features: Sequence[Column]) -> "Table":
        """New table holding ``features`` followed by this table's target."""
        if self.target is None:
            return Table(tuple(features), self.n_rows)
        cols = tuple(features) + (self.target_column,)
        return Table(cols, self.n_rows, len(cols) - 1, self.classes)

    def equals(self, other: "Table") -> bool:
        return (
            self.n_rows == other.n_rows
            and self.target == other.target
            and self.classes == other.classes
            and len(self.columns) == len(other.columns)
            and all(a.equals(b) for a, b in zip(self.columns, other.columns))
        )


def _parses_as_number(text: str) -> bool:
    try:
        return math.isfinite(float(text))
    except ValueError:
        return False


def load_csv(path, target_name: str | None) -> Table:
    """Read a header-first CSV. Every column whose non-empty cells all parse as
    finite numbers is numeric; the rest (and the target) are categorical."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file, header row required")
    header, body = rows[0], rows[1:]
    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicate column names in header")
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(
                f"{path}: row {lineno} has {len(row)} fields, header has {len(header)}"
            )
    if target_name is not None and target_name not in header:
        raise DataError(f"{path}: target column {target_name!r} not found")

    columns = []
    for j, name in enumerate(header):
        cells = [row[j] for row in body]
        numeric = name != target_name and all(_parses_as_number(s) for s in cells if s != "")
        if numeric:
            vals = [float(s) if s != "" else np.nan for s in cells]
            columns.append(Column.numeric(name, vals))
        else:
            columns.append(Column.categorical(name, cells))
    target = header.index(target_name) if target_name is not None else None
    return Table(tuple(columns), len(body), target)


def write_csv(table: Table, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([c.name for c in table.columns])
        for i in range(table.n_rows):
            row = []
            for c in table.columns:
                if c.missing[i]:
                    row.append("")
                elif c.is_numeric:
                    row.append(repr(float(c.values[i])))
                else:
                    row.append(c.values[i])
            writer.writerow(row)


def _class_rows(t: Table) -> list[np.ndarray]:
    y = t.y
    return [np.flatnonzero(y == k) for k in range(t.n_classes)]


def split_train_test(t: Table, ratio: float, seed: int) -> tuple[Table, Table]:
    """Stratified split; the test share is floor(n * (1 - ratio)) rows, spread
    over classes by largest remainder."""
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    if t.target is None:
        raise ValueError("stratified split needs a target column")
    groups = _class_rows(t)
    for k, rows in enumerate(groups):
        if 0 < len(rows) < 2:
            raise DataError(f"class {t.classes[k]!r} has fewer than 2 rows; cannot stratify")
    n = t.n_rows
    n_test = int(math.floor(n * (1.0 - ratio) + 1e-9))
    exact = [len(rows) * n_test / n for rows in groups]
    counts = [int(math.floor(e + 1e-9)) for e in exact]
    leftover = n_test - sum(counts)
    order = sorted(range(len(groups)), key=lambda k: (-(exact[k] - counts[k]), k))
    for k in order[:leftover]:
        counts[k] += 1
    rng = np.random.default_rng(seed)
    test_rows = []
    for rows, c in zip(groups, counts):
        c = min(c, len(rows) - 1) if len(rows) else 0
        test_rows.extend(rng.permutation(rows)[:c].tolist())
    test_mask = np.zeros(n, dtype=bool)
    test_mask[test_rows] = True
    return t.take(np.flatnonzero(~test_mask)), t.take(np.flatnonzero(test_mask))


def kfold_indices(t: Table, k: int, seed: int) -> list[np.ndarray]:
    """Validation row indices of ``k`` stratified folds. Rows are shuffled within
    each class, laid out class by class and dealt round-robin, so earlier folds
    receive the remainder rows."""
    if k < 2:
        raise ValueError("k must be at least 2")
    groups = _class_rows(t)
    for cls, rows in zip(t.classes, groups):
        if 0 < len(rows) < k:
            raise DataError(f"class {cls!r} has {len(rows)} rows, fewer than k={k}")
    rng = np.random.default_rng(seed)
    dealt = np.concatenate([rng.permutation(rows) for rows in groups])
    fold_of = np.arange(len(dealt)) % k
    return [np.sort(dealt[fold_of == f]) for f in range(k)]


def kfold_split(t: Table, k: int, seed: int) -> list[tuple[Table, Table]]:
    folds = []
    for valid in kfold_indices(t, k, seed):
        mask = np.zeros(t.n_rows, dtype=bool)
        mask[valid] = True
        folds.append((t.take(np.flatnonzero(~mask)), t.take(valid)))
    return folds


def metafeatures(t: Table) -> np.ndarray:
    feats = t.features
    if not feats:
        raise DataError("meta-features need at least one feature column")
    m = len(feats)
    numeric = [c for c in feats if c.is_numeric]
    categorical = [c for c in feats if not c.is_numeric]
    cells = m * t.n_rows
    n_missing = sum(c.n_missing for c in feats)

    means = [c.mean for c in numeric if c.mean is not None]
    stds = [c.std for c in numeric if c.std is not None]
    if t.target is not None and t.n_rows:
        counts = np.bincount(t.y, minlength=t.n_classes)
        n_classes = float(np.count_nonzero(counts))
        majority = float(counts.max() / t.n_rows)
    else:
        n_classes = majority = 0.0
    card = float(np.mean([c.n_distinct for c in categorical])) if categorical else 0.0

    vec = np.array(
        [
            math.log1p(t.n_rows),
            math.log1p(m),
            len(numeric) / m,
            len(categorical) / m,
            n_missing / cells if cells else 0.0,
            float(np.mean(means)) if means else 0.0,
            float(np.std(means)) if means else 0.0,
            float(np.mean(stds)) if stds else 0.0,
            n_classes,
            majority,
            math.log1p(card),
            sum(c.has_missing for c in feats) / m,
        ],
        dtype=np.float64,
    )
    return vec


@dataclass(frozen=True, eq=False)
class LearningJob:
    dataset: Table
    task: str = "classification"
    metric: str = "accuracy"
    name: str = ""
    raw_metafeatures: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.task != "classification":
            raise NotImplementedError("only classification jobs are supported")
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.dataset.target is None:
            raise DataError("a learning job needs a target column")
        object.__setattr__(self, "raw_metafeatures", _frozen(metafeatures(self.dataset)))

    def vector(self) -> np.ndarray:
        """Task one-hot, metric one-hot, raw-dataset meta-features."""
        task = np.zeros(len(TASKS))
        task[TASKS.index(self.task)] = 1.0
        metric = np.zeros(len(METRICS))
        metric[METRICS.index(self.metric)] = 1.0
        return np.concatenate([task, metric, self.raw_metafeatures])


JOB_VECTOR_LEN = len(TASKS) + len(METRICS) + N_METAFEATURES
