import numpy as np
import pytest
from hypothesis import settings

from pipegrid import toydata
from pipegrid.pipeline import Grid
from pipegrid.primitives import catalog
from pipegrid.tabular import Column, LearningJob, Table, split_train_test

settings.register_profile("default", deadline=None)
settings.load_profile("default")

ACCEPTANCE = {}
PRIM_ID = {p.name: p.id for p in catalog()}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (passed, detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


def make_table(features: dict, labels, kinds: dict | None = None) -> Table:
    cols = []
    for name, values in features.items():
        if (kinds or {}).get(name) == "categorical" or (len(values) and isinstance(values[0], str)):
            cols.append(Column.categorical(name, values))
        else:
            cols.append(Column.numeric(name, values))
    cols.append(Column.categorical("target", [str(v) for v in labels]))
    return Table(tuple(cols), len(labels), len(cols) - 1)


def random_table(seed: int, n_rows=None, n_num=None, n_cat=None, n_classes=None, missing=None, negative=None) -> Table:
    """Random mixed table with a clean target; every class has >= 3 rows."""
    rng = np.random.default_rng(seed)
    n_classes = n_classes or int(rng.integers(2, 4))
    n_rows = n_rows or int(rng.integers(3 * n_classes + 6, 60))
    n_num = int(rng.integers(0, 4)) if n_num is None else n_num
    n_cat = int(rng.integers(0, 3)) if n_cat is None else n_cat
    if n_num + n_cat == 0:
        n_num = 1
    missing = rng.random() < 0.5 if missing is None else missing
    negative = rng.random() < 0.5 if negative is None else negative
    y = np.concatenate([np.arange(n_classes).repeat(3), rng.integers(0, n_classes, n_rows - 3 * n_classes)])
    rng.shuffle(y)
    cols = []
    for j in range(n_num):
        v = rng.normal(size=n_rows) + y * rng.normal()
        if not negative:
            v = np.abs(v)
        if missing and j == 0:
            v[rng.random(n_rows) < 0.2] = np.nan
            v[0] = 1.0  # never all missing
        cols.append(Column.numeric(f"n{j}", v))
    for j in range(n_cat):
        levels = np.array(["a", "b", "c", "d"])[: int(rng.integers(2, 5))]
        v = rng.choice(levels, size=n_rows).astype(object)
        if missing and j == 0:
            v[rng.random(n_rows) < 0.2] = ""
            v[0] = levels[0]
        cols.append(Column.categorical(f"c{j}", v))
    cols.append(Column.categorical("target", [f"k{v}" for v in y]))
    return Table(tuple(cols), n_rows, len(cols) - 1)


@pytest.fixture(scope="session")
def toy_tables():
    return {name: make() for name, make in toydata.TOY_DATASETS.items()}


@pytest.fixture(scope="session")
def toy_jobs(toy_tables):
    return [LearningJob(split_train_test(t, 0.8, 0)[0], name=n) for n, t in toy_tables.items()]


def seven_step_grid() -> Grid:
    """Seven steps: row 1 imputer -> MI selector -> tree; row 2 standardizer ->
    PCA -> forest (extra input from step 1); row 3 a lone drop-constant."""
    return Grid.from_rows(
        [
            [(PRIM_ID["imputer"], [0]), None, (PRIM_ID["mutual_info_selector"], [1]), None, (PRIM_ID["decision_tree"], [3]), None],
            [None, (PRIM_ID["standardizer"], [0]), None, (PRIM_ID["pca"], [8]), (PRIM_ID["random_forest"], [10, 1]), None],
            [(PRIM_ID["drop_constant"], [0]), None, None, None, None, None],
        ]
    )
