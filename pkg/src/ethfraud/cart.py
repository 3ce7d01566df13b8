"""Binary classification trees grown by gini-impurity reduction.

Trees are stored as flat node arrays (``feature[k] < 0`` marks a leaf).
Routing convention: ``x[feature] <= threshold`` goes left.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass

import numpy as np
from numba import njit

# split decreases closer than this are treated as ties (first candidate wins)
TIE_EPS = 1e-12


@njit(cache=True, nogil=True)
def _gini2(a, b):
    n = a + b
    return 2.0 * a * b / (n * n)


@njit(cache=True, nogil=True)
def _midpoint(a, b):
    t = 0.5 * (a + b)
    if t >= b:  # a and b adjacent floats
        t = a
    return t


@njit(cache=True, nogil=True)
def _split_segment(X, y, idx, start, end, features, min_node_size):
    n = end - start
    n_f = 0
    for k in range(start, end):
        n_f += y[idx[k]]
    best_f = -1
    best_t = 0.0
    best_d = -np.inf
    if n <= min_node_size or n_f == 0 or n_f == n:
        return best_f, best_t, best_d
    parent = _gini2(n_f, n - n_f)
    vals = np.empty(n)
    for f in features:
        for k in range(n):
            vals[k] = X[idx[start + k], f]
        order = np.argsort(vals, kind="mergesort")
        left_f = 0
        for p in range(n - 1):
            o = order[p]
            left_f += y[idx[start + o]]
            a = vals[o]
            b = vals[order[p + 1]]
            if b > a:
                nl = p + 1
                nr = n - nl
                rf = n_f - left_f
                d = parent - (nl / n) * _gini2(left_f, nl - left_f) - (nr / n) * _gini2(rf, nr - rf)
                if best_f < 0 or d > best_d + TIE_EPS:
                    best_f = f
                    best_d = d
                    best_t = _midpoint(a, b)
    return best_f, best_t, best_d


@njit(cache=True, nogil=True)
def _grow(X, y, sample, mtry, min_node_size, seed):
    np.random.seed(seed)
    n = sample.shape[0]
    n_feat = X.shape[1]
    idx = sample.copy()
    cap = 2 * n + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    n_fraud = np.zeros(cap, np.int64)
    n_nonfraud = np.zeros(cap, np.int64)
    decrease = np.zeros(cap)
    seg_start = np.zeros(cap, np.int64)
    seg_end = np.zeros(cap, np.int64)
    stack = np.zeros(cap, np.int64)
    perm = np.arange(n_feat)

    seg_end[0] = n
    n_nodes = 1
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        s = seg_start[node]
        e = seg_end[node]
        nf = 0
        for k in range(s, e):
            nf += y[idx[k]]
        n_fraud[node] = nf
        n_nonfraud[node] = (e - s) - nf
        if e - s <= min_node_size or nf == 0 or nf == e - s:
            continue
        for i in range(n_feat):
            perm[i] = i
        for i in range(mtry):
            j = i + np.random.randint(0, n_feat - i)
            tmp = perm[i]
            perm[i] = perm[j]
            perm[j] = tmp
        feats = np.sort(perm[:mtry])
        f, t, d = _split_segment(X, y, idx, s, e, feats, min_node_size)
        if f < 0:
            continue
        # in-place partition of idx[s:e]: rows with x[f] <= t first
        i = s
        j = e - 1
        while i <= j:
            if X[idx[i], f] <= t:
                i += 1
            else:
                tmp = idx[i]
                idx[i] = idx[j]
                idx[j] = tmp
                j -= 1
        feature[node] = f
        threshold[node] = t
        decrease[node] = d
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        seg_start[lc] = s
        seg_end[lc] = i
        seg_start[rc] = i
        seg_end[rc] = e
        stack[top] = rc
        stack[top + 1] = lc
        top += 2
    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes],
            n_fraud[:n_nodes], n_nonfraud[:n_nodes], decrease[:n_nodes])


@njit(cache=True, nogil=True)
def apply_nodes(feature, threshold, left, right, X):
    """Index of the leaf each row of ``X`` lands in."""
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


def as_matrix(X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    return X.reshape(1, -1) if X.ndim == 1 else X


@dataclass(frozen=True, eq=False)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    n_fraud: np.ndarray
    n_nonfraud: np.ndarray
    decrease: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, k: int) -> bool:
        return self.feature[k] < 0

    def apply(self, X) -> np.ndarray:
        return apply_nodes(self.feature, self.threshold, self.left, self.right, as_matrix(X))

    def predict_proba(self, X) -> np.ndarray:
        """Leaf class proportions, columns (p_fraud, p_nonfraud)."""
        leaves = self.apply(X)
        f = self.n_fraud[leaves].astype(np.float64)
        total = f + self.n_nonfraud[leaves]
        p_fraud = f / total
        return np.column_stack([p_fraud, 1.0 - p_fraud])

    def leaf_votes_nonfraud(self, X) -> np.ndarray:
        """1 where the leaf majority is non-fraud; a tied leaf votes fraud."""
        leaves = self.apply(X)
        return (self.n_nonfraud[leaves] > self.n_fraud[leaves]).astype(np.int64)

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for k in range(self.n_nodes):
            if self.feature[k] >= 0:
                depth[self.left[k]] = depth[self.right[k]] = depth[k] + 1
        return int(depth.max())

    def to_dict(self) -> dict:
        with _deep_recursion(self.depth()):
            return self._node_dict(0)

    def _node_dict(self, k: int) -> dict:
        if self.feature[k] < 0:
            return {"n_fraud": int(self.n_fraud[k]), "n_nonfraud": int(self.n_nonfraud[k])}
        return {
            "feature": int(self.feature[k]),
            "threshold": float(self.threshold[k]),
            "decrease": float(self.decrease[k]),
            "n_fraud": int(self.n_fraud[k]),
            "n_nonfraud": int(self.n_nonfraud[k]),
            "left": self._node_dict(int(self.left[k])),
            "right": self._node_dict(int(self.right[k])),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Tree":
        cols = {k: [] for k in ("feature", "threshold", "left", "right", "n_fraud", "n_nonfraud", "decrease")}
        pending = [(doc, -1, "")]
        while pending:
            node, parent, side = pending.pop()
            k = len(cols["feature"])
            if parent >= 0:
                cols[side][parent] = k
            internal = "left" in node
            cols["feature"].append(int(node["feature"]) if internal else -1)
            cols["threshold"].append(float(node["threshold"]) if internal else 0.0)
            cols["decrease"].append(float(node["decrease"]) if internal else 0.0)
            cols["n_fraud"].append(int(node["n_fraud"]))
            cols["n_nonfraud"].append(int(node["n_nonfraud"]))
            cols["left"].append(-1)
            cols["right"].append(-1)
            if internal:
                pending.append((node["right"], k, "right"))
                pending.append((node["left"], k, "left"))
        return cls(
            np.array(cols["feature"], dtype=np.int64), np.array(cols["threshold"], dtype=np.float64),
            np.array(cols["left"], dtype=np.int64), np.array(cols["right"], dtype=np.int64),
            np.array(cols["n_fraud"], dtype=np.int64), np.array(cols["n_nonfraud"], dtype=np.int64),
            np.array(cols["decrease"], dtype=np.float64),
        )


class _deep_recursion:
    """Raise the interpreter recursion limit while walking a deep nested tree."""

    def __init__(self, depth: int):
        self.needed = 3 * depth + 200
        self.saved = sys.getrecursionlimit()

    def __enter__(self):
        if self.needed > self.saved:
            sys.setrecursionlimit(self.needed)

    def __exit__(self, *exc):
        sys.setrecursionlimit(self.saved)


def gini(counts) -> float:
    """Gini impurity of a (n_fraud, n_nonfraud) node."""
    a, b = counts
    if a < 0 or b < 0 or a + b < 1:
        raise ValueError(f"invalid class counts {counts!r}")
    return float(_gini2(float(a), float(b)))


def best_split(X, y, candidate_features, min_node_size: int = 1):
    """Best gini split of the rows ``(X, y)`` restricted to ``candidate_features``.

    Returns ``(feature_index, threshold, impurity_decrease)`` or ``None`` when the
    node is pure, has at most ``min_node_size`` rows, or every candidate is constant.
    Ties go to the lower feature index, then the lower threshold.
    """
    X = as_matrix(X)
    y = np.ascontiguousarray(y, dtype=np.int64)
    feats = np.unique(np.asarray(candidate_features, dtype=np.int64))
    if len(feats) == 0:
        raise ValueError("candidate_features must be non-empty")
    f, t, d = _split_segment(X, y, np.arange(len(y), dtype=np.int64), 0, len(y), feats, min_node_size)
    if f < 0:
        return None
    return int(f), float(t), float(d)


def grow_tree(X, y, mtry: int, min_node_size: int, rng: np.random.Generator, sample=None) -> Tree:
    """Grow an unpruned tree, sampling ``mtry`` candidate features at every node.

    ``sample`` lists the training row indices (duplicates allowed, as in a
    bootstrap); by default every row once.
    """
    X = as_matrix(X)
    y = np.ascontiguousarray(y, dtype=np.int64)
    if not 1 <= mtry <= X.shape[1]:
        raise ValueError(f"mtry must be in [1, {X.shape[1]}], got {mtry}")
    if min_node_size < 1:
        raise ValueError("min_node_size must be positive")
    sample = np.arange(len(y), dtype=np.int64) if sample is None else np.ascontiguousarray(sample, dtype=np.int64)
    if len(sample) == 0:
        raise ValueError("cannot grow a tree on zero rows")
    seed = int(rng.integers(0, 2**32 - 1))
    return Tree(*_grow(X, y, sample, mtry, min_node_size, seed))


def predict_tree(tree: Tree, x) -> tuple[float, float]:
    p = tree.predict_proba(x)[0]
    return float(p[0]), float(p[1])
