import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_table, random_table
from pipegrid.tabular import (
    JOB_VECTOR_LEN,
    METAFEATURE_NAMES,
    TASKS,
    Column,
    DataError,
    LearningJob,
    Table,
    kfold_indices,
    kfold_split,
    load_csv,
    metafeatures,
    split_train_test,
    write_csv,
)


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_numeric_column_detected(tmp_path):
    t = load_csv(_write(tmp_path, "x,y\n1,a\n2,b\n3,a\n"), "y")
    x = t.column("x")
    assert x.is_numeric and x.n_missing == 0
    assert list(x.values) == [1.0, 2.0, 3.0]


def test_categorical_with_missing(tmp_path):
    t = load_csv(_write(tmp_path, "c,y\na,p\n,q\nb,p\n"), "y")
    c = t.column("c")
    assert not c.is_numeric and c.n_missing == 1


def test_ragged_row_names_row(tmp_path):
    with pytest.raises(DataError, match="row 2"):
        load_csv(_write(tmp_path, "a,b,c\n1,2,3,4\n"), "c")


def test_missing_file_and_target(tmp_path):
    with pytest.raises(DataError):
        load_csv(tmp_path / "nope.csv", "y")
    with pytest.raises(DataError, match="not found"):
        load_csv(_write(tmp_path, "a,b\n1,2\n"), "y")


def test_target_with_missing_rejected(tmp_path):
    with pytest.raises(DataError):
        load_csv(_write(tmp_path, "a,y\n1,p\n2,\n"), "y")


def test_table_invariants():
    a = Column.numeric("a", [1, 2, 3])
    with pytest.raises(ValueError):
        Table((a, Column.numeric("b", [1, 2])), 3)
    with pytest.raises(ValueError):
        Table((a, Column.numeric("a2", [1, 2, 3], lineage="raw/a")), 3)


def _two_class(n_a, n_b):
    y = ["a"] * n_a + ["b"] * n_b
    return make_table({"x": np.arange(n_a + n_b, dtype=float)}, y)


def test_split_sizes_and_determinism():
    t = _two_class(60, 40)
    tr, te = split_train_test(t, 0.8, seed=3)
    assert (tr.n_rows, te.n_rows) == (80, 20)
    tr2, te2 = split_train_test(t, 0.8, seed=3)
    assert tr.equals(tr2) and te.equals(te2)


def test_split_balanced_per_class():
    t = _two_class(50, 50)
    tr, te = split_train_test(t, 0.8, seed=0)
    # oracle: 10 of each class go to test, 40 stay
    assert np.bincount(tr.y).tolist() == [40, 40]
    assert np.bincount(te.y).tolist() == [10, 10]


def test_split_rejects_singleton_class():
    with pytest.raises(DataError):
        split_train_test(_two_class(20, 1), 0.8, 0)


def test_kfold_even_and_remainder():
    sizes = [len(v) for v in kfold_indices(_two_class(45, 45), 3, 0)]
    assert sizes == [30, 30, 30]
    # 91 rows dealt round-robin: the single remainder row lands in fold 0
    sizes = [len(v) for v in kfold_indices(_two_class(46, 45), 3, 0)]
    assert sizes == [31, 30, 30]


def test_kfold_rejects_small_class():
    with pytest.raises(DataError):
        kfold_split(_two_class(20, 2), 3, 0)


def test_kfold_train_valid_disjoint():
    t = _two_class(30, 15)
    for tr, va in kfold_split(t, 3, 1):
        assert tr.n_rows + va.n_rows == 45
        tr_x = set(tr.column("x").values.tolist())
        va_x = set(va.column("x").values.tolist())
        assert not tr_x & va_x


@settings(max_examples=60)
@given(st.integers(0, 10_000), st.integers(2, 5))
def test_kfold_partitions_rows(seed, k):
    t = random_table(seed, n_rows=int(np.random.default_rng(seed).integers(3 * k + 10, 200)))
    counts = np.bincount(t.y, minlength=t.n_classes)
    if counts.min() < k:
        with pytest.raises(DataError):
            kfold_indices(t, k, seed)
        return
    folds = kfold_indices(t, k, seed)
    joined = np.concatenate(folds)
    assert sorted(joined.tolist()) == list(range(t.n_rows))


@settings(max_examples=60)
@given(st.integers(0, 10_000), st.floats(0.5, 0.9))
def test_split_preserves_proportions(seed, ratio):
    t = random_table(seed)
    tr, te = split_train_test(t, ratio, seed)
    assert tr.n_rows + te.n_rows == t.n_rows
    full = np.bincount(t.y, minlength=t.n_classes)
    test_counts = np.bincount(te.y, minlength=t.n_classes)
    expected = full * te.n_rows / t.n_rows
    assert np.all(np.abs(test_counts - expected) <= 1.0 + 1e-9)


def test_metafeature_examples():
    num = make_table({f"f{i}": np.arange(6.0) + i for i in range(4)}, ["a", "b"] * 3)
    v = metafeatures(num)
    assert v[METAFEATURE_NAMES.index("pct_numeric")] == 1.0
    assert v[METAFEATURE_NAMES.index("pct_categorical")] == 0.0
    assert v[METAFEATURE_NAMES.index("pct_missing")] == 0.0
    mixed = make_table(
        {"a": [1.0, 2.0], "b": [3.0, 4.0], "c": [5.0, 6.0], "d": ["u", "v"]}, ["p", "q"]
    )
    assert metafeatures(mixed)[METAFEATURE_NAMES.index("pct_numeric")] == 0.75


def test_metafeatures_reject_empty():
    t = Table((Column.categorical("y", ["a", "b"]),), 2, 0)
    with pytest.raises(DataError):
        metafeatures(t)


@settings(max_examples=80)
@given(st.integers(0, 10_000))
def test_metafeatures_shape_and_ranges(seed):
    v = metafeatures(random_table(seed))
    assert v.shape == (12,)
    assert np.all(np.isfinite(v))
    for name in ("pct_numeric", "pct_categorical", "pct_missing", "pct_cols_with_missing", "majority_class_ratio"):
        assert 0.0 <= v[METAFEATURE_NAMES.index(name)] <= 1.0
    for name in ("log_n_rows", "log_n_cols", "log_mean_cardinality"):
        assert v[METAFEATURE_NAMES.index(name)] >= 0.0


@settings(max_examples=40)
@given(st.integers(0, 10_000))
def test_csv_round_trip(tmp_path_factory, seed):
    t = random_table(seed)
    path = tmp_path_factory.mktemp("rt") / "t.csv"
    write_csv(t, path)
    back = load_csv(path, "target")
    assert back.equals(t)


def test_job_vector():
    t = _two_class(5, 5)
    job = LearningJob(t)
    vec = job.vector()
    assert len(vec) == JOB_VECTOR_LEN
    assert vec[TASKS.index("classification")] == 1.0
    assert vec[: len(TASKS)].sum() == 1.0
    assert np.array_equal(vec[-12:], metafeatures(t))
    with pytest.raises(NotImplementedError):
        LearningJob(t, task="regression")
    assert math.isclose(vec[len(TASKS)], 1.0)
