import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ethfraud.dataset import (
    FEATURE_NAMES, Dataset, Standardizer, apply_standardizer, fit_standardizer, kfold, kfold_indices,
    read_feature_table, stratified_split, write_feature_table,
)
from ethfraud.ingest import ParseError


def make(n, n_fraud, n_features=13, seed=0):
    rng = np.random.default_rng(seed)
    y = np.zeros(n, dtype=int)
    y[:n_fraud] = 1
    names = FEATURE_NAMES if n_features == 13 else tuple(f"f{j}" for j in range(n_features))
    return Dataset(tuple(f"0x{i:040x}" for i in range(n)), rng.normal(size=(n, n_features)), y, names)


def test_dataset_validation():
    with pytest.raises(ValueError, match="duplicate"):
        Dataset(("a", "a"), np.zeros((2, 1)), [0, 1], ("f",))
    with pytest.raises(ValueError, match="non-finite"):
        Dataset(("a",), [[np.nan]], [0], ("f",))
    with pytest.raises(ValueError, match="shapes"):
        Dataset(("a",), np.zeros((1, 2)), [0], ("f",))
    d = make(4, 2)
    with pytest.raises(ValueError):
        d.X[0, 0] = 1.0  # read-only


def test_drop_features_and_subset():
    d = make(6, 2)
    e = d.drop_features(["IT", "DUR"])
    assert e.feature_names == FEATURE_NAMES[1:-1]
    assert np.array_equal(e.X, d.X[:, 1:-1])
    with pytest.raises(KeyError):
        d.drop_features(["nope"])
    s = d.subset([5, 0])
    assert s.addresses == (d.addresses[5], d.addresses[0])


def test_split_ten_rows():
    d = make(10, 5)
    train, val = stratified_split(d, 0.8, seed=1)
    assert (len(train), train.n_fraud, len(val), val.n_fraud) == (8, 4, 2, 1)


def test_split_full_corpus_sizes():
    y = np.zeros(352_199, dtype=np.int8)
    y[:2200] = 1
    d = Dataset(tuple(range(len(y))), np.zeros((len(y), 1)), y, ("f",))
    train, val = stratified_split(d, 0.8, seed=0)
    assert abs(len(train) - 281_760) <= 1 and abs(len(val) - 70_439) <= 1


def test_split_requires_both_classes_and_fraction():
    with pytest.raises(ValueError, match="both classes"):
        stratified_split(make(5, 0), 0.5, 0)
    with pytest.raises(ValueError):
        stratified_split(make(5, 2), 1.0, 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 200), st.data())
def test_split_partition_properties(n, data):
    n_fraud = data.draw(st.integers(1, n - 1))
    frac = data.draw(st.floats(0.05, 0.95))
    seed = data.draw(st.integers(0, 1000))
    d = make(n, n_fraud, n_features=2)
    train, val = stratified_split(d, frac, seed)
    assert sorted(train.addresses + val.addresses) == sorted(d.addresses)
    assert not set(train.addresses) & set(val.addresses)
    assert abs(train.n_fraud - frac * n_fraud) <= 1
    assert abs(train.n_nonfraud - frac * (n - n_fraud)) <= 1
    again = stratified_split(d, frac, seed)
    assert again[0].addresses == train.addresses


def test_kfold_sizes_and_partition():
    d = make(100, 30, n_features=2)
    folds = kfold(d, 10, seed=4)
    assert [len(h) for _, h in folds] == [10] * 10
    seen = [a for _, h in folds for a in h.addresses]
    assert sorted(seen) == sorted(d.addresses)
    for train, hold in folds:
        assert not set(train.addresses) & set(hold.addresses)
        assert hold.n_fraud == 3


def test_kfold_minority_too_small():
    with pytest.raises(ValueError, match="minority"):
        kfold_indices(make(100, 9).y, 10, 0)
    with pytest.raises(ValueError):
        kfold_indices(make(100, 50).y, 1, 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 10), st.integers(0, 300), st.integers(0, 300), st.integers(0, 99))
def test_kfold_properties(k, n_fraud, n_non, seed):
    n_fraud, n_non = n_fraud + k, n_non + k
    y = np.array([1] * n_fraud + [0] * n_non)
    folds = kfold_indices(y, k, seed)
    sizes = [len(f) for f in folds]
    assert max(sizes) - min(sizes) <= 1
    fraud_counts = [int(y[f].sum()) for f in folds]
    assert max(fraud_counts) - min(fraud_counts) <= 1
    assert np.array_equal(np.sort(np.concatenate(folds)), np.arange(len(y)))
    assert all(np.array_equal(a, b) for a, b in zip(folds, kfold_indices(y, k, seed)))


def test_standardizer_two_point_and_constant(caplog):
    d = Dataset(("a", "b"), [[0.0, 5.0], [2.0, 5.0]], [0, 1], ("x", "c"))
    with caplog.at_level(logging.WARNING):
        s = fit_standardizer(d)
    assert "constant" in caplog.text
    assert list(s.constant) == [False, True]
    out = apply_standardizer(s, d).X
    assert np.array_equal(out, [[-1.0, 0.0], [1.0, 0.0]])


def test_standardizer_random_matrix_and_round_trip():
    d = make(1000, 100)
    s = fit_standardizer(d)
    Z = apply_standardizer(s, d).X
    assert np.all(np.abs(Z.mean(axis=0)) < 1e-9)
    assert np.all(np.abs(Z.std(axis=0) - 1) < 1e-9)
    s2 = Standardizer.from_dict(s.to_dict())
    assert np.array_equal(s2.transform(d.X), Z) and s2.n_rows == 1000
    with pytest.raises(ValueError):
        fit_standardizer(d.subset([]))


def test_feature_table_round_trip(tmp_path):
    d = make(20, 5)
    p = tmp_path / "f.csv"
    write_feature_table(p, d)
    e = read_feature_table(p)
    assert e.addresses == d.addresses and e.feature_names == d.feature_names
    assert np.array_equal(e.X, d.X) and np.array_equal(e.y, d.y)
    assert p.read_text().splitlines()[0] == "address,label," + ",".join(FEATURE_NAMES)


def test_feature_table_parse_errors(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text("address,label,IT\nx,fraud,1\ny,fraud\n")
    with pytest.raises(ParseError) as err:
        read_feature_table(p)
    assert err.value.row == 3
    p.write_text("address,label,IT\nx,scam,1\n")
    with pytest.raises(ParseError):
        read_feature_table(p)
