"""Small synthetic classification datasets used as the training corpus."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .tabular import Column, Table, write_csv

TARGET = "target"


def _table(columns: list[Column], labels) -> Table:
    cols = columns + [Column.categorical(TARGET, labels)]
    return Table(tuple(cols), len(labels), len(cols) - 1)


def blobs_missing(n=180, seed=0) -> Table:
    """Two Gaussian classes in 6 numeric columns, two of them with holes."""
    rng = np.random.default_rng(seed)
    y = (rng.random(n) < 0.4).astype(int)
    X = rng.normal(size=(n, 6))
    X[:, 0] += 1.6 * y
    X[:, 1] -= 1.2 * y
    X[:, 2] = X[:, 0] * 0.5 + rng.normal(scale=0.5, size=n)
    X[:, 3] += 5.0
    for j in (0, 4):
        X[rng.random(n) < 0.12, j] = np.nan
    cols = [Column.numeric(f"f{j}", X[:, j]) for j in range(6)]
    return _table(cols, np.where(y == 1, "pos", "neg"))


def mixed_categorical(n=180, seed=1) -> Table:
    """Three classes driven by a categorical column and a numeric threshold."""
    rng = np.random.default_rng(seed)
    color = rng.choice(["red", "green", "blue"], size=n)
    size = rng.choice(["s", "m", "l", "xl"], size=n)
    x = rng.normal(size=n)
    z = rng.normal(size=n)
    y = np.where(color == "red", 0, np.where(x > 0.3, 1, 2))
    flip = rng.random(n) < 0.08
    y = np.where(flip, rng.integers(0, 3, size=n), y)
    cols = [
        Column.categorical("color", color),
        Column.categorical("size", size),
        Column.numeric("x", x),
        Column.numeric("z", z),
        Column.numeric("w", rng.uniform(0, 10, size=n)),
    ]
    return _table(cols, np.array(["a", "b", "c"])[y])


def xor_negative(n=200, seed=2) -> Table:
    """XOR of the signs of two centred columns plus noise columns."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, 5))
    y = ((X[:, 0] > 0) ^ (X[:, 1] > 0)).astype(int)
    flip = rng.random(n) < 0.05
    y = np.where(flip, 1 - y, y)
    cols = [Column.numeric(f"u{j}", X[:, j]) for j in range(5)]
    return _table(cols, np.where(y == 1, "yes", "no"))


TOY_DATASETS = {
    "blobs_missing": blobs_missing,
    "mixed_categorical": mixed_categorical,
    "xor_negative": xor_negative,
}


def write_corpus(directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, make in TOY_DATASETS.items():
        path = directory / f"{name}.csv"
        write_csv(make(), path)
        paths.append(path)
    return paths
