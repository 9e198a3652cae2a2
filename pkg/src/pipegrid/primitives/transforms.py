"""Table-level fit/transform implementations behind each catalog entry.

Each implementation has ``fit(table, rng, tag) -> params`` and
``transform(params, table, tag) -> list[Column]`` (the new feature columns).
``tag`` is the grid cell the primitive sits in; it goes into the lineage of
every column the primitive creates or rewrites, so outputs of different cells
never collide at merges while untouched columns keep their lineage.
"""
from __future__ import annotations

import math

import numpy as np

from ..tabular import Column, Table
from . import learners


class NumericalFailure(RuntimeError):
    """A transformer could not fit; the caller falls back to identity."""


def _derived(col: Column, values, suffix: str, tag: int, missing=None) -> Column:
    return Column.numeric(f"{col.name}_{suffix}", values, f"{col.lineage}>{suffix}@{tag}", missing)


def _matrix(features, fill=None) -> np.ndarray:
    X = np.column_stack([c.values for c in features]).astype(np.float64)
    if fill is not None:
        nan = np.isnan(X)
        if nan.any():
            X[nan] = np.broadcast_to(fill, X.shape)[nan]
    return X


def _keep_count(m: int) -> int:
    return max(1, math.ceil(m / 2))


# -- family 1: data preprocessing ---------------------------------------------


class Imputer:
    """Mean for numeric columns, most frequent level for categorical ones."""

    def fit(self, t, rng, tag):
        fills, touched = [], []
        for c in t.features:
            if c.is_numeric:
                fills.append(c.mean if c.mean is not None else 0.0)
            else:
                present = c.present.tolist()
                if present:
                    levels, counts = np.unique(present, return_counts=True)
                    fills.append(str(levels[int(np.argmax(counts))]))
                else:
                    fills.append("missing")
            touched.append(c.has_missing)
        return {"fills": fills, "touched": touched}

    def transform(self, p, t, tag):
        out = []
        for c, fill, touched in zip(t.features, p["fills"], p["touched"]):
            if not touched and not c.has_missing:
                out.append(c)
                continue
            lineage = f"{c.lineage}>impute@{tag}" if touched else c.lineage
            vals = c.values.copy()
            vals[c.missing] = fill
            if c.is_numeric:
                out.append(Column.numeric(c.name, vals, lineage, np.zeros(len(c), bool)))
            else:
                out.append(Column.categorical(c.name, vals, lineage, np.zeros(len(c), bool)))
        return out


class OneHotEncoder:
    """Indicator columns for fit-time levels; missing and unseen levels encode
    as an all-zero block. Numeric columns pass through."""

    def fit(self, t, rng, tag):
        return {"levels": [None if c.is_numeric else c.levels for c in t.features]}

    def transform(self, p, t, tag):
        out = []
        for c, levels in zip(t.features, p["levels"]):
            if levels is None:
                out.append(c)
                continue
            for level in levels:
                ind = ((c.values == level) & ~c.missing).astype(np.float64)
                out.append(
                    Column.numeric(
                        f"{c.name}={level}", ind, f"{c.lineage}>onehot@{tag}={level}",
                        np.zeros(len(c), bool),
                    )
                )
        return out


class DropConstant:
    def fit(self, t, rng, tag):
        return {"keep": [c.n_distinct > 1 for c in t.features]}

    def transform(self, p, t, tag):
        return [c for c, keep in zip(t.features, p["keep"]) if keep]


# -- family 2: feature preprocessing ------------------------------------------


class MinMaxScaler:
    def fit(self, t, rng, tag):
        lo, hi = [], []
        for c in t.features:
            present = c.present
            lo.append(float(present.min()) if len(present) else 0.0)
            hi.append(float(present.max()) if len(present) else 0.0)
        return {"lo": lo, "hi": hi}

    def transform(self, p, t, tag):
        out = []
        for c, lo, hi in zip(t.features, p["lo"], p["hi"]):
            span = hi - lo
            vals = (c.values - lo) / span if span > 0 else np.zeros(len(c))
            out.append(_derived(c, vals, "minmax", tag, c.missing))
        return out


class Standardizer:
    def fit(self, t, rng, tag):
        return {
            "mean": [c.mean if c.mean is not None else 0.0 for c in t.features],
            "std": [c.std if c.std is not None else 0.0 for c in t.features],
        }

    def transform(self, p, t, tag):
        out = []
        for c, mu, sd in zip(t.features, p["mean"], p["std"]):
            vals = (c.values - mu) / sd if sd > 0 else np.zeros(len(c))
            out.append(_derived(c, vals, "std", tag, c.missing))
        return out


class EqualWidthDiscretizer:
    def __init__(self, bins=5):
        self.bins = bins

    def fit(self, t, rng, tag):
        return MinMaxScaler().fit(t, rng, tag)

    def transform(self, p, t, tag):
        out = []
        for c, lo, hi in zip(t.features, p["lo"], p["hi"]):
            span = hi - lo
            if span > 0:
                codes = np.floor((c.values - lo) / span * self.bins)
                codes = np.clip(codes, 0, self.bins - 1)
            else:
                codes = np.zeros(len(c))
            out.append(_derived(c, codes, "bin", tag, c.missing))
        return out


# -- family 3: feature selection ----------------------------------------------


def mutual_information(x: np.ndarray, y: np.ndarray, n_classes: int, bins: int = 10) -> float:
    """MI (nats) between a numeric feature and class codes. Features with at
    most ``bins`` distinct values are used as-is, others binned equal-width."""
    distinct = np.unique(x)
    if len(distinct) <= bins:
        codes = np.searchsorted(distinct, x)
        n_bins = len(distinct)
    else:
        lo, hi = x.min(), x.max()
        codes = np.clip(np.floor((x - lo) / (hi - lo) * bins), 0, bins - 1).astype(np.int64)
        n_bins = bins
    joint = np.zeros((n_bins, n_classes))
    np.add.at(joint, (codes, y), 1.0)
    joint /= joint.sum()
    px = joint.sum(1, keepdims=True)
    py = joint.sum(0, keepdims=True)
    nz = joint > 0
    return float((joint[nz] * np.log(joint[nz] / (px @ py)[nz])).sum())


def chi_square(X: np.ndarray, y: np.ndarray, n_classes: int) -> np.ndarray:
    Y = np.eye(n_classes)[y]
    observed = Y.T @ X
    expected = Y.mean(0)[:, None] * X.sum(0)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(expected > 0, (observed - expected) ** 2 / expected, 0.0)
    return terms.sum(0)


class _TopK:
    def scores(self, t: Table) -> np.ndarray:
        raise NotImplementedError

    def fit(self, t, rng, tag):
        scores = self.scores(t)
        k = _keep_count(len(scores))
        # stable: highest score first, earlier column wins ties
        chosen = sorted(np.argsort(-scores, kind="stable")[:k].tolist())
        return {"keep": chosen}

    def transform(self, p, t, tag):
        feats = t.features
        return [feats[i] for i in p["keep"]]


class VarianceSelector(_TopK):
    def scores(self, t):
        return np.array([c.std**2 if c.std is not None else 0.0 for c in t.features])


class MutualInfoSelector(_TopK):
    def scores(self, t):
        return np.array(
            [mutual_information(c.values, t.y, t.n_classes) for c in t.features]
        )


class ChiSquareSelector(_TopK):
    def scores(self, t):
        return chi_square(_matrix(t.features), t.y, t.n_classes)


# -- family 4: feature engineering --------------------------------------------


class PCAProjection:
    def __init__(self, max_components=8):
        self.max_components = max_components

    def fit(self, t, rng, tag):
        X = _matrix(t.features)
        mean = X.mean(0)
        Xc = X - mean
        if not np.isfinite(Xc).all() or (Xc**2).sum() < 1e-12:
            raise NumericalFailure("no variance to project")
        try:
            _, _, vt = np.linalg.svd(Xc, full_matrices=False)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure(str(exc)) from exc
        k = min(self.max_components, X.shape[1], vt.shape[0])
        comps = vt[:k]
        signs = np.sign(comps[np.arange(k), np.abs(comps).argmax(1)])
        signs[signs == 0] = 1.0
        return {"mean": mean, "components": comps * signs[:, None]}

    def transform(self, p, t, tag):
        Z = (_matrix(t.features, p["mean"]) - p["mean"]) @ p["components"].T
        return [
            Column.numeric(f"pca{i}", Z[:, i], f"pca{i}@{tag}", np.zeros(t.n_rows, bool))
            for i in range(Z.shape[1])
        ]


class InteractionFeatures:
    """Originals plus pairwise products of the first ``max_base`` columns."""

    def __init__(self, max_base=5):
        self.max_base = max_base

    def fit(self, t, rng, tag):
        m = min(self.max_base, t.n_features)
        fill = [c.mean if c.mean is not None else 0.0 for c in t.features]
        return {"pairs": [(i, j) for i in range(m) for j in range(i + 1, m)], "fill": fill}

    def transform(self, p, t, tag):
        feats = t.features
        X = _matrix(feats, np.asarray(p["fill"]))
        out = list(feats)
        for i, j in p["pairs"]:
            a, b = feats[i], feats[j]
            out.append(
                Column.numeric(
                    f"{a.name}*{b.name}", X[:, i] * X[:, j],
                    f"({a.lineage}*{b.lineage})@{tag}", np.zeros(t.n_rows, bool),
                )
            )
        return out


class RandomProjection:
    def __init__(self, max_components=8):
        self.max_components = max_components

    def fit(self, t, rng, tag):
        m = t.n_features
        k = min(self.max_components, m)
        fill = np.array([c.mean if c.mean is not None else 0.0 for c in t.features])
        return {"R": rng.normal(0.0, 1.0 / math.sqrt(k), size=(m, k)), "fill": fill}

    def transform(self, p, t, tag):
        Z = _matrix(t.features, p["fill"]) @ p["R"]
        return [
            Column.numeric(f"rp{i}", Z[:, i], f"rp{i}@{tag}", np.zeros(t.n_rows, bool))
            for i in range(Z.shape[1])
        ]


# -- families 5 and 6: estimators and combiners -------------------------------


class Estimator:
    """Wraps a learner. Categorical inputs are one-hot encoded with fit-time
    levels; NaN cells are mean-filled unless the learner copes with them."""

    def __init__(self, learner, keep_nan=False):
        self.learner = learner
        self.keep_nan = keep_nan

    def _design(self, p, t):
        blocks = []
        for c, levels, fill in zip(t.features, p["levels"], p["fill"]):
            if levels is None:
                v = c.values.astype(np.float64)
                if not self.keep_nan:
                    v = np.where(c.missing, fill, v)
                blocks.append(v[:, None])
            elif levels:
                blocks.append(
                    np.stack([(c.values == lv) & ~c.missing for lv in levels], 1).astype(np.float64)
                )
        if not blocks:
            return np.zeros((t.n_rows, 1))
        return np.hstack(blocks)

    def fit(self, t, rng, tag):
        p = {
            "levels": [None if c.is_numeric else c.levels for c in t.features],
            "fill": [
                (c.mean if c.mean is not None else 0.0) if c.is_numeric else None
                for c in t.features
            ],
        }
        X = self._design(p, t)
        p["model"] = self.learner.fit(X, t.y, t.n_classes, rng)
        return p

    def transform(self, p, t, tag):
        scores = self.learner.predict_scores(p["model"], self._design(p, t))
        if not np.all(np.isfinite(scores)):
            raise learners.FitError("non-finite class scores")
        pred = np.argmax(scores, axis=1)
        labels = [t.classes[k] for k in pred]
        zeros = np.zeros(t.n_rows, bool)
        out = [Column.categorical(f"pred@{tag}", labels, f"cellpredict/{tag}", zeros)]
        for k, cls in enumerate(t.classes):
            out.append(Column.numeric(f"score@{tag}:{cls}", scores[:, k], f"cellscore/{tag}/{cls}", zeros))
        return out
