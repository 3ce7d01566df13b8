"""Random forest over unpruned CART trees with a cutoff-probability decision rule."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .cart import Tree, as_matrix, grow_tree
from .dataset import FRAUD_CODE, NONFRAUD_CODE, Dataset


@dataclass(frozen=True)
class RFParams:
    n_trees: int = 500
    mtry: int = 3
    min_node_size: int = 1
    cutoff: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be positive")
        if self.mtry < 1:
            raise ValueError("mtry must be positive")
        if self.min_node_size < 1:
            raise ValueError("min_node_size must be positive")
        if not 0.0 < self.cutoff < 1.0:
            raise ValueError("cutoff must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class ForestModel:
    trees: list
    params: RFParams
    feature_names: tuple

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "model_type": "rf",
            "params": asdict(self.params),
            "feature_names": list(self.feature_names),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ForestModel":
        return cls([Tree.from_dict(t) for t in doc["trees"]], RFParams(**doc["params"]),
                   tuple(doc["feature_names"]))


def _grow_one(X, y, params: RFParams, mtry: int, i: int) -> Tree:
    # per-tree stream keyed on (seed, tree index): serial and threaded runs agree
    rng = np.random.default_rng([params.seed, i])
    sample = rng.integers(0, len(y), size=len(y))
    return grow_tree(X, y, mtry, params.min_node_size, rng, sample=sample)


def train_forest(train: Dataset, p: RFParams, threads: int = 1) -> ForestModel:
    if train.n_fraud == 0 or train.n_nonfraud == 0:
        raise ValueError("training data must contain both classes")
    if p.mtry > train.n_features:
        raise ValueError(f"mtry={p.mtry} exceeds the {train.n_features} available features")
    X = np.ascontiguousarray(train.X)
    y = np.ascontiguousarray(train.y, dtype=np.int64)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trees = list(pool.map(lambda i: _grow_one(X, y, p, p.mtry, i), range(p.n_trees)))
    else:
        trees = [_grow_one(X, y, p, p.mtry, i) for i in range(p.n_trees)]
    return ForestModel(trees, p, train.feature_names)


def forest_proba(m: ForestModel, X) -> np.ndarray:
    """Share of trees voting non-fraud, for each row of ``X``."""
    X = as_matrix(X)
    votes = np.zeros(X.shape[0], dtype=np.int64)
    for tree in m.trees:
        votes += tree.leaf_votes_nonfraud(X)
    return votes / len(m.trees)


def classify(p_nonfraud, cutoff: float):
    """Non-fraud strictly above ``cutoff``, fraud otherwise (ties go to fraud)."""
    out = np.where(np.asarray(p_nonfraud) > cutoff, NONFRAUD_CODE, FRAUD_CODE)
    return int(out) if out.ndim == 0 else out


def gini_importance(m: ForestModel) -> tuple[np.ndarray, np.ndarray]:
    """Mean over trees of reach-probability-weighted impurity decrease, per feature.

    Returns ``(raw, normalized)``; the normalized scores sum to one unless no
    tree ever split, in which case both are all zeros.
    """
    raw = np.zeros(len(m.feature_names))
    for tree in m.trees:
        root_rows = tree.n_fraud[0] + tree.n_nonfraud[0]
        internal = tree.feature >= 0
        weight = (tree.n_fraud[internal] + tree.n_nonfraud[internal]) / root_rows
        np.add.at(raw, tree.feature[internal], weight * tree.decrease[internal])
    raw /= len(m.trees)
    total = raw.sum()
    return raw, (raw / total if total > 0 else np.zeros_like(raw))
