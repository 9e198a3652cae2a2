"""Small numpy classifiers used by the estimator and combiner primitives.

Every learner exposes ``fit(X, y, n_classes, rng)`` returning a parameter dict
and ``predict_scores(params, X)`` returning an (n, n_classes) score matrix.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit
from scipy.optimize import minimize


class FitError(RuntimeError):
    pass


# -- decision tree ------------------------------------------------------------


@njit(cache=True)
def _grow(X, y, n_classes, max_depth, max_features, seed):
    """Greedy gini tree grown depth-first; arrays are preallocated for a full
    binary tree of ``max_depth``. Ties keep the earliest candidate feature and
    the lowest threshold."""
    np.random.seed(seed)
    n, d = X.shape
    cap = 2 ** (max_depth + 1)
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros((cap, n_classes))

    rows_buf = np.arange(n)
    # stack entries: node, start, stop, depth (rows_buf[start:stop] are its rows)
    stack = np.zeros((cap, 4), np.int64)
    for i in range(n):
        value[0, y[i]] += 1.0
    n_nodes = 1
    top = 0
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n
    stack[0, 3] = 0
    top = 1
    counts_l = np.zeros(n_classes)
    total = np.zeros(n_classes)
    feats = np.arange(d)
    while top > 0:
        top -= 1
        node, start, stop, depth = stack[top, 0], stack[top, 1], stack[top, 2], stack[top, 3]
        m = stop - start
        total[:] = value[node]
        pure = False
        for k in range(n_classes):
            if total[k] == m:
                pure = True
        if depth >= max_depth or m < 2 or pure:
            continue
        if max_features < d:
            feats = np.sort(np.random.permutation(d)[:max_features])
        else:
            feats = np.arange(d)
        rows = rows_buf[start:stop].copy()
        best_imp = np.inf
        best_f = -1
        best_thr = 0.0
        for f in feats:
            xs = X[rows, f]
            order = np.argsort(xs, kind="mergesort")
            counts_l[:] = 0.0
            for i in range(m - 1):
                r = rows[order[i]]
                counts_l[y[r]] += 1.0
                a = xs[order[i]]
                b = xs[order[i + 1]]
                if b <= a:
                    continue
                nl = i + 1.0
                nr = m - nl
                sl = 0.0
                sr = 0.0
                for k in range(n_classes):
                    sl += counts_l[k] * counts_l[k]
                    cr = total[k] - counts_l[k]
                    sr += cr * cr
                imp = (nl - sl / nl) + (nr - sr / nr)
                if imp < best_imp:
                    best_imp = imp
                    best_f = f
                    best_thr = 0.5 * (a + b)
        if best_f < 0:
            continue
        # partition rows in place: left block then right block, original order kept
        lcount = 0
        for i in range(m):
            if X[rows[i], best_f] <= best_thr:
                rows_buf[start + lcount] = rows[i]
                lcount += 1
        rc = 0
        for i in range(m):
            if X[rows[i], best_f] > best_thr:
                rows_buf[start + lcount + rc] = rows[i]
                rc += 1
        feature[node] = best_f
        threshold[node] = best_thr
        li = n_nodes
        ri = n_nodes + 1
        n_nodes += 2
        left[node] = li
        right[node] = ri
        for i in range(start, start + lcount):
            value[li, y[rows_buf[i]]] += 1.0
        for i in range(start + lcount, stop):
            value[ri, y[rows_buf[i]]] += 1.0
        stack[top, 0] = ri
        stack[top, 1] = start + lcount
        stack[top, 2] = stop
        stack[top, 3] = depth + 1
        top += 1
        stack[top, 0] = li
        stack[top, 1] = start
        stack[top, 2] = start + lcount
        stack[top, 3] = depth + 1
        top += 1
    for i in range(n_nodes):
        s = value[i].sum()
        if s > 0:
            value[i] /= s
    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


def fit_tree(X, y, n_classes, rng, max_depth=8, max_features=None):
    d = X.shape[1]
    mf = d if max_features is None else min(max_features, d)
    seed = int(rng.integers(0, 2**31 - 1))
    feature, threshold, left, right, value = _grow(
        np.ascontiguousarray(X, dtype=np.float64),
        np.ascontiguousarray(y, dtype=np.int64),
        n_classes,
        max_depth,
        mf,
        seed,
    )
    return {"feature": feature, "threshold": threshold, "left": left, "right": right, "value": value}


@njit(cache=True)
def _route(feature, threshold, left, right, X):
    out = np.empty(X.shape[0], np.int64)
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


def tree_scores(tree, X):
    leaves = _route(tree["feature"], tree["threshold"], tree["left"], tree["right"],
                    np.ascontiguousarray(X, dtype=np.float64))
    return tree["value"][leaves]


class DecisionTree:
    def __init__(self, max_depth=8):
        self.max_depth = max_depth

    def fit(self, X, y, n_classes, rng):
        return {"tree": fit_tree(X, y, n_classes, rng, self.max_depth)}

    def predict_scores(self, params, X):
        return tree_scores(params["tree"], X)


class RandomForest:
    def __init__(self, n_trees=20, max_depth=8):
        self.n_trees = n_trees
        self.max_depth = max_depth

    def fit(self, X, y, n_classes, rng):
        n, d = X.shape
        max_features = max(1, int(math.sqrt(d)))
        trees = []
        for _ in range(self.n_trees):
            boot = rng.integers(0, n, size=n)
            trees.append(fit_tree(X[boot], y[boot], n_classes, rng, self.max_depth, max_features))
        return {"trees": trees}

    def predict_scores(self, params, X):
        return np.mean([tree_scores(t, X) for t in params["trees"]], axis=0)


class KNearestNeighbors:
    def __init__(self, k=5):
        self.k = k

    def fit(self, X, y, n_classes, rng):
        return {"X": X.copy(), "y": y.copy(), "n_classes": n_classes}

    def predict_scores(self, params, X):
        Xt, yt = params["X"], params["y"]
        k = min(self.k, len(Xt))
        d2 = (
            (X**2).sum(1)[:, None]
            - 2.0 * X @ Xt.T
            + (Xt**2).sum(1)[None, :]
        )
        nearest = np.argsort(d2, axis=1, kind="stable")[:, :k]
        votes = np.zeros((len(X), params["n_classes"]))
        np.add.at(votes, (np.repeat(np.arange(len(X)), k), yt[nearest].ravel()), 1.0)
        return votes / k


class GaussianNaiveBayes:
    """Gaussian likelihoods per feature; NaN cells are skipped."""

    def fit(self, X, y, n_classes, rng):
        present = ~np.isnan(X)
        Xz = np.where(present, X, 0.0)
        mean = np.zeros((n_classes, X.shape[1]))
        var = np.ones((n_classes, X.shape[1]))
        prior = np.zeros(n_classes)
        for k in range(n_classes):
            rows = y == k
            prior[k] = rows.sum()
            cnt = present[rows].sum(0)
            safe = np.maximum(cnt, 1)
            mean[k] = Xz[rows].sum(0) / safe
            sq = (np.where(present[rows], Xz[rows] - mean[k], 0.0) ** 2).sum(0)
            var[k] = sq / safe
        col_var = np.nanvar(X, axis=0) if X.size else np.zeros(X.shape[1])
        col_var = np.where(np.isnan(col_var), 0.0, col_var)
        var = var + 1e-9 * max(float(col_var.max(initial=0.0)), 1.0)
        logprior = np.log((prior + 1.0) / (prior.sum() + n_classes))
        return {"mean": mean, "var": var, "logprior": logprior}

    def predict_scores(self, params, X):
        present = ~np.isnan(X)
        Xz = np.where(present, X, 0.0)
        mean, var = params["mean"], params["var"]
        ll = -0.5 * (np.log(2 * np.pi * var)[None] + (Xz[:, None, :] - mean[None]) ** 2 / var[None])
        ll = np.where(present[:, None, :], ll, 0.0).sum(-1) + params["logprior"][None]
        ll -= ll.max(1, keepdims=True)
        p = np.exp(ll)
        return p / p.sum(1, keepdims=True)


class LogisticRegression:
    """Multinomial logistic regression, L2 penalty, L-BFGS on standardized inputs."""

    def __init__(self, l2=1.0, max_iter=100):
        self.l2 = l2
        self.max_iter = max_iter

    def fit(self, X, y, n_classes, rng):
        n, d = X.shape
        mu = X.mean(0)
        sd = X.std(0)
        sd[sd == 0] = 1.0
        Z = (X - mu) / sd
        Y = np.eye(n_classes)[y]

        def loss_grad(w):
            W = w[: d * n_classes].reshape(d, n_classes)
            b = w[d * n_classes :]
            logits = Z @ W + b
            logits -= logits.max(1, keepdims=True)
            logp = logits - np.log(np.exp(logits).sum(1, keepdims=True))
            p = np.exp(logp)
            loss = -(Y * logp).sum() / n + 0.5 * self.l2 * (W**2).sum() / n
            G = (p - Y) / n
            gW = Z.T @ G + self.l2 * W / n
            return loss, np.concatenate([gW.ravel(), G.sum(0)])

        res = minimize(
            loss_grad,
            np.zeros(d * n_classes + n_classes),
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": self.max_iter},
        )
        if not np.all(np.isfinite(res.x)):
            raise FitError("logistic regression diverged")
        return {
            "W": res.x[: d * n_classes].reshape(d, n_classes),
            "b": res.x[d * n_classes :],
            "mu": mu,
            "sd": sd,
        }

    def predict_scores(self, params, X):
        logits = ((X - params["mu"]) / params["sd"]) @ params["W"] + params["b"]
        logits -= logits.max(1, keepdims=True)
        p = np.exp(logits)
        return p / p.sum(1, keepdims=True)
