"""Labeled feature matrices, stratified splitting, k-fold partitioning, scaling."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .ingest import FRAUD, NONFRAUD, ParseError

log = logging.getLogger(__name__)

FEATURE_NAMES = ("IT", "OT", "UIT", "UOT", "AVIT", "AVOT", "VIT", "VOT", "ATIT", "ATOT", "AGP", "AGL", "DUR")

# numeric class codes; fraud is the positive class everywhere
FRAUD_CODE = 1
NONFRAUD_CODE = 0


def label_code(label: str) -> int:
    if label == FRAUD:
        return FRAUD_CODE
    if label == NONFRAUD:
        return NONFRAUD_CODE
    raise ValueError(f"unknown label {label!r}")


def label_name(code: int) -> str:
    return FRAUD if code == FRAUD_CODE else NONFRAUD


@dataclass(frozen=True, eq=False)
class Dataset:
    """Rows of (address, label, features). ``y`` holds 1 for fraud, 0 otherwise."""

    addresses: tuple
    X: np.ndarray
    y: np.ndarray
    feature_names: tuple = FEATURE_NAMES

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64, copy=True)
        y = np.array(self.y, dtype=np.int8, copy=True)
        addresses = tuple(self.addresses)
        names = tuple(self.feature_names)
        if X.ndim != 2:
            X = X.reshape(len(addresses), len(names))
        if X.shape != (len(addresses), len(names)) or y.shape != (len(addresses),):
            raise ValueError(f"inconsistent shapes: X{X.shape}, y{y.shape}, "
                             f"{len(addresses)} addresses, {len(names)} features")
        if len(set(addresses)) != len(addresses):
            raise ValueError("duplicate addresses")
        if not np.all(np.isfinite(X)):
            raise ValueError("non-finite feature values")
        if not np.all((y == FRAUD_CODE) | (y == NONFRAUD_CODE)):
            raise ValueError("labels must be 0/1")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "addresses", addresses)
        object.__setattr__(self, "feature_names", names)

    def __len__(self):
        return len(self.addresses)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def n_fraud(self) -> int:
        return int(self.y.sum())

    @property
    def n_nonfraud(self) -> int:
        return len(self) - self.n_fraud

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(tuple(self.addresses[i] for i in idx), self.X[idx], self.y[idx], self.feature_names)

    def drop_features(self, names: Sequence[str]) -> "Dataset":
        unknown = set(names) - set(self.feature_names)
        if unknown:
            raise KeyError(f"unknown features: {sorted(unknown)}")
        keep = [j for j, n in enumerate(self.feature_names) if n not in set(names)]
        return Dataset(self.addresses, self.X[:, keep], self.y, tuple(self.feature_names[j] for j in keep))

    def with_X(self, X) -> "Dataset":
        return Dataset(self.addresses, X, self.y, self.feature_names)


def _require_both_classes(d: Dataset) -> None:
    if d.n_fraud == 0 or d.n_nonfraud == 0:
        raise ValueError(f"both classes required (fraud={d.n_fraud}, nonfraud={d.n_nonfraud})")


def stratified_split(d: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Per-class shuffled split; each class contributes round(fraction * n_class) training rows."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    _require_both_classes(d)
    rng = np.random.default_rng(seed)
    train_idx, val_idx = [], []
    for code in (FRAUD_CODE, NONFRAUD_CODE):
        members = rng.permutation(np.flatnonzero(d.y == code))
        n_train = int(round(train_fraction * len(members)))
        train_idx.append(members[:n_train])
        val_idx.append(members[n_train:])
    return d.subset(np.sort(np.concatenate(train_idx))), d.subset(np.sort(np.concatenate(val_idx)))


def kfold_indices(y: np.ndarray, k: int, seed: int) -> list[np.ndarray]:
    """Stratified fold assignment; returns the sorted holdout indices of each fold.

    Shuffled fraud rows are dealt round-robin, then shuffled non-fraud rows
    continue the deal, so fold sizes (overall and per class) differ by at most one.
    """
    y = np.asarray(y)
    if k < 2:
        raise ValueError("k must be at least 2")
    n_fraud = int((y == FRAUD_CODE).sum())
    minority = min(n_fraud, len(y) - n_fraud)
    if minority < k:
        raise ValueError(f"k={k} exceeds the {minority} rows of the minority class")
    rng = np.random.default_rng(seed)
    deal = np.concatenate([rng.permutation(np.flatnonzero(y == FRAUD_CODE)),
                           rng.permutation(np.flatnonzero(y == NONFRAUD_CODE))])
    fold_of = np.empty(len(y), dtype=np.int64)
    fold_of[deal] = np.arange(len(y)) % k
    return [np.flatnonzero(fold_of == f) for f in range(k)]


def kfold(d: Dataset, k: int, seed: int) -> list[tuple[Dataset, Dataset]]:
    folds = kfold_indices(d.y, k, seed)
    everything = np.arange(len(d))
    return [(d.subset(np.setdiff1d(everything, hold)), d.subset(hold)) for hold in folds]


@dataclass(frozen=True, eq=False)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray
    n_rows: int
    constant: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.constant is None:
            object.__setattr__(self, "constant", np.zeros(len(self.mean), dtype=bool))

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "n_rows": self.n_rows,
                "constant": [bool(c) for c in self.constant]}

    @classmethod
    def from_dict(cls, doc: dict) -> "Standardizer":
        return cls(np.asarray(doc["mean"], dtype=np.float64), np.asarray(doc["std"], dtype=np.float64),
                   int(doc["n_rows"]), np.asarray(doc["constant"], dtype=bool))


def fit_standardizer(train: Dataset) -> Standardizer:
    if len(train) == 0:
        raise ValueError("cannot fit a standardizer on an empty dataset")
    mean = train.X.mean(axis=0)
    std = train.X.std(axis=0)
    constant = std == 0
    if constant.any():
        names = [n for n, c in zip(train.feature_names, constant) if c]
        log.warning("constant features %s: std forced to 1", names)
    std = np.where(constant, 1.0, std)
    return Standardizer(mean, std, len(train), constant)


def apply_standardizer(s: Standardizer, d: Dataset) -> Dataset:
    return d.with_X(s.transform(d.X))


# --------------------------------------------------------------------------- feature table CSV


def write_feature_table(path, d: Dataset) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["address", "label", *d.feature_names])
        for address, code, row in zip(d.addresses, d.y, d.X):
            w.writerow([address, label_name(code), *(repr(float(v)) for v in row)])


def read_feature_table(path) -> Dataset:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["address", "label"] or len(header) < 3:
            raise ParseError(path, 1, "expected header address,label,<features...>")
        names = tuple(header[2:])
        addresses, labels, rows = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(path, lineno, f"expected {len(header)} fields, got {len(row)}")
            try:
                labels.append(label_code(row[1]))
                rows.append([float(v) for v in row[2:]])
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
            addresses.append(row[0])
    X = np.array(rows, dtype=np.float64).reshape(len(rows), len(names))
    return Dataset(tuple(addresses), X, np.array(labels, dtype=np.int8), names)
