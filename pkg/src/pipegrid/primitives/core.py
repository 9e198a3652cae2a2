from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from enum import IntEnum
from functools import lru_cache
from typing import Any, Sequence

import numpy as np

from ..tabular import Table
from . import learners
from . import transforms as tf

log = logging.getLogger(__name__)

BLANK_ID = 0

TREE_DEPTH = 8
FOREST_TREES = 20
KNN_K = 5
DISCRETIZER_BINS = 5
MAX_PROJECTION = 8


class Family(IntEnum):
    DATA_PREPROCESSING = 1
    FEATURE_PREPROCESSING = 2
    FEATURE_SELECTION = 3
    FEATURE_ENGINEERING = 4
    ESTIMATOR = 5
    COMBINER = 6


PREDICTOR_FAMILIES = (Family.ESTIMATOR, Family.COMBINER)


class InvalidPipeline(RuntimeError):
    """A pipeline cannot be executed (rejected input or a failed estimator)."""


@dataclass(frozen=True)
class PrimitiveSpec:
    id: int
    name: str
    family: Family
    handles_missing: bool
    handles_categorical: bool
    requires_nonnegative: bool
    algorithm: str
    hyperparameters: tuple[tuple[str, Any], ...] = ()

    @property
    def is_predictor(self) -> bool:
        return self.family in PREDICTOR_FAMILIES

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "family": int(self.family),
            "family_name": self.family.name.lower(),
            "handles_missing": self.handles_missing,
            "handles_categorical": self.handles_categorical,
            "requires_nonnegative": self.requires_nonnegative,
            "algorithm": self.algorithm,
            "hyperparameters": dict(self.hyperparameters),
        }


_KEEP_HALF = (("keep", "max(1, ceil(m/2))"),)

# (name, family, missing, categorical, nonnegative, algorithm, hyperparameters)
_ENTRIES = [
    ("imputer", Family.DATA_PREPROCESSING, True, True, False, "mean_mode_imputer", ()),
    ("one_hot_encoder", Family.DATA_PREPROCESSING, True, True, False, "one_hot", ()),
    ("drop_constant", Family.DATA_PREPROCESSING, True, True, False, "drop_constant", ()),
    ("min_max_scaler", Family.FEATURE_PREPROCESSING, True, False, False, "min_max", ()),
    ("standardizer", Family.FEATURE_PREPROCESSING, True, False, False, "standardize", ()),
    ("discretizer", Family.FEATURE_PREPROCESSING, False, False, False, "equal_width_bins",
     (("bins", DISCRETIZER_BINS),)),
    ("variance_selector", Family.FEATURE_SELECTION, False, False, False, "variance_topk", _KEEP_HALF),
    ("mutual_info_selector", Family.FEATURE_SELECTION, False, False, False, "mutual_info_topk", _KEEP_HALF),
    ("chi2_selector", Family.FEATURE_SELECTION, False, False, True, "chi2_topk", _KEEP_HALF),
    ("pca", Family.FEATURE_ENGINEERING, False, False, False, "pca",
     (("components", f"min({MAX_PROJECTION}, m)"),)),
    ("interactions", Family.FEATURE_ENGINEERING, False, False, False, "degree2_interactions",
     (("max_base_columns", 5),)),
    ("random_projection", Family.FEATURE_ENGINEERING, False, False, False, "gaussian_projection",
     (("components", f"min({MAX_PROJECTION}, m)"),)),
]

# (algorithm, handles_missing, handles_categorical, hyperparameters)
_LEARNERS = [
    ("decision_tree", False, True, (("max_depth", TREE_DEPTH),)),
    ("random_forest", False, True, (("n_trees", FOREST_TREES), ("max_depth", TREE_DEPTH))),
    ("knn", False, False, (("k", KNN_K),)),
    ("naive_bayes", True, True, ()),
    ("logistic_regression", False, False, (("l2", 1.0), ("max_iter", 100))),
]

for _alg, _miss, _cat, _hp in _LEARNERS:
    _ENTRIES.append((_alg, Family.ESTIMATOR, _miss, _cat, False, _alg, _hp))
for _alg, _miss, _cat, _hp in _LEARNERS:
    # combiners consume upstream prediction columns, which are categorical
    _ENTRIES.append((f"{_alg}_combiner", Family.COMBINER, _miss, True, False, _alg, _hp))


@lru_cache(maxsize=1)
def catalog() -> tuple[PrimitiveSpec, ...]:
    """The fixed primitive catalog; ids are dense from 1 (0 is the blank step)."""
    return tuple(
        PrimitiveSpec(i, name, fam, miss, cat, nonneg, alg, hp)
        for i, (name, fam, miss, cat, nonneg, alg, hp) in enumerate(_ENTRIES, start=1)
    )


def primitive(pid: int) -> PrimitiveSpec:
    specs = catalog()
    if not 1 <= pid <= len(specs):
        raise KeyError(f"no primitive with id {pid}")
    return specs[pid - 1]


def family_members(family: int) -> tuple[PrimitiveSpec, ...]:
    return tuple(p for p in catalog() if p.family == family)


def catalog_json() -> list[dict]:
    return [p.to_json() for p in catalog()]


def catalog_hash() -> str:
    blob = json.dumps(catalog_json(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _impl(spec: PrimitiveSpec):
    alg = spec.algorithm
    if alg == "mean_mode_imputer":
        return tf.Imputer()
    if alg == "one_hot":
        return tf.OneHotEncoder()
    if alg == "drop_constant":
        return tf.DropConstant()
    if alg == "min_max":
        return tf.MinMaxScaler()
    if alg == "standardize":
        return tf.Standardizer()
    if alg == "equal_width_bins":
        return tf.EqualWidthDiscretizer(DISCRETIZER_BINS)
    if alg == "variance_topk":
        return tf.VarianceSelector()
    if alg == "mutual_info_topk":
        return tf.MutualInfoSelector()
    if alg == "chi2_topk":
        return tf.ChiSquareSelector()
    if alg == "pca":
        return tf.PCAProjection(MAX_PROJECTION)
    if alg == "degree2_interactions":
        return tf.InteractionFeatures()
    if alg == "gaussian_projection":
        return tf.RandomProjection(MAX_PROJECTION)
    if alg == "decision_tree":
        return tf.Estimator(learners.DecisionTree(TREE_DEPTH))
    if alg == "random_forest":
        return tf.Estimator(learners.RandomForest(FOREST_TREES, TREE_DEPTH))
    if alg == "knn":
        return tf.Estimator(learners.KNearestNeighbors(KNN_K))
    if alg == "naive_bayes":
        return tf.Estimator(learners.GaussianNaiveBayes(), keep_nan=True)
    if alg == "logistic_regression":
        return tf.Estimator(learners.LogisticRegression())
    raise KeyError(alg)


_IMPLS = {spec.id: _impl(spec) for spec in catalog()}


def table_flags(t: Table) -> tuple[bool, bool, bool, int]:
    """(has missing, has categorical, has negative, n features) over feature columns."""
    feats = t.features
    return (
        any(c.has_missing for c in feats),
        any(not c.is_numeric for c in feats),
        any(c.has_negative for c in feats),
        len(feats),
    )


def accepts_flags(p: PrimitiveSpec, flags: tuple[bool, bool, bool, int]) -> bool:
    missing, categorical, negative, width = flags
    return (
        (not missing or p.handles_missing)
        and (not categorical or p.handles_categorical)
        and (not negative or not p.requires_nonnegative)
        and width >= 1
    )


def can_accept(p: PrimitiveSpec, merged_input: Table) -> bool:
    return accepts_flags(p, table_flags(merged_input))


def merge_inputs(inputs: Sequence[Table]) -> Table:
    """Concatenate feature columns in input order, keeping the first column of
    each lineage id; the target comes from the first input."""
    if not inputs:
        raise ValueError("merge_inputs needs at least one table")
    first = inputs[0]
    if len(inputs) == 1:
        return first
    for t in inputs[1:]:
        if t.n_rows != first.n_rows:
            raise InvalidPipeline(
                f"row-count mismatch at merge: {t.n_rows} vs {first.n_rows}"
            )
    seen = set()
    if first.target is not None:
        seen.add(first.target_column.lineage)
    merged = []
    for t in inputs:
        for c in t.features:
            if c.lineage not in seen:
                seen.add(c.lineage)
                merged.append(c)
    return first.with_features(merged)


@dataclass(frozen=True, eq=False)
class FittedPrimitive:
    spec_id: int
    params: Any
    signature: tuple[str, ...]
    tag: int = 0
    fallback: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def spec(self) -> PrimitiveSpec:
        return primitive(self.spec_id)


def fit_apply(p: PrimitiveSpec, input: Table, seed: int, tag: int = 0) -> tuple[FittedPrimitive, Table]:
    """Fit ``p`` on ``input`` and return it with its output on the same rows.

    Transformers that fail numerically fall back to identity (``fallback`` is
    set); estimator failures raise InvalidPipeline.
    """
    if not can_accept(p, input):
        raise InvalidPipeline(f"{p.name} cannot accept its input")
    impl = _IMPLS[p.id]
    rng = np.random.default_rng(seed)
    try:
        params = impl.fit(input, rng, tag)
        fallback = False
    except tf.NumericalFailure as exc:
        if p.is_predictor:
            raise InvalidPipeline(f"{p.name}: {exc}") from exc
        log.debug("%s fell back to identity at cell %s: %s", p.name, tag, exc)
        params, fallback = None, True
    except (learners.FitError, np.linalg.LinAlgError, FloatingPointError) as exc:
        raise InvalidPipeline(f"{p.name}: {exc}") from exc
    fitted = FittedPrimitive(p.id, params, input.feature_lineages, tag, fallback)
    return fitted, apply(fitted, input)


def apply(fp: FittedPrimitive, input: Table) -> Table:
    if input.feature_lineages != fp.signature:
        raise ValueError(
            f"input schema does not match the one {fp.spec.name} was fitted on"
        )
    if fp.fallback:
        return input
    try:
        cols = _IMPLS[fp.spec_id].transform(fp.params, input, fp.tag)
    except learners.FitError as exc:
        raise InvalidPipeline(f"{fp.spec.name}: {exc}") from exc
    return input.with_features(cols)
