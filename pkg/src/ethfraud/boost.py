"""Second-order gradient-boosted regression trees for the logistic loss.

Labels are coded fraud=1, non-fraud=0; the model's margin is the fraud logit.
Split finding is exact greedy over presorted feature columns, grown level by
level up to ``max_depth``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, replace
from typing import Iterator

import numpy as np
from numba import njit

from .cart import apply_nodes, as_matrix
from .dataset import FRAUD_CODE, NONFRAUD_CODE, Dataset

log = logging.getLogger(__name__)

HESS_FLOOR = 1e-16


@dataclass(frozen=True)
class XGBParams:
    max_depth: int = 6
    colsample: float = 1.0
    min_child_weight: float = 1.0
    eta: float = 0.1
    reg_lambda: float = 1.0
    gamma_pen: float = 0.0
    n_rounds: int = 2000
    early_stop_rounds: int | None = 100
    cutoff: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be positive")
        if not 0.0 < self.colsample <= 1.0:
            raise ValueError("colsample must lie in (0, 1]")
        if self.min_child_weight < 0 or self.reg_lambda < 0 or self.gamma_pen < 0 or self.eta < 0:
            raise ValueError("min_child_weight, reg_lambda, gamma_pen and eta must be non-negative")
        if self.n_rounds < 1:
            raise ValueError("n_rounds must be positive")
        if self.early_stop_rounds is not None and self.early_stop_rounds < 1:
            raise ValueError("early_stop_rounds must be positive or None")
        if not 0.0 < self.cutoff < 1.0:
            raise ValueError("cutoff must lie in (0, 1)")


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def log_loss(y, margin) -> float:
    """Mean logistic loss of fraud-logit margins against 0/1 labels."""
    y = np.asarray(y, dtype=np.float64)
    margin = np.asarray(margin, dtype=np.float64)
    return float(np.mean(y * np.logaddexp(0.0, -margin) + (1.0 - y) * np.logaddexp(0.0, margin)))


def logistic_grad_hess(y, margin):
    p = sigmoid(margin)
    g = p - np.asarray(y, dtype=np.float64)
    h = np.maximum(p * (1.0 - p), HESS_FLOOR)
    if np.ndim(g) == 0:
        return float(g), float(h)
    return g, h


def split_gain(G_L, H_L, G_R, H_R, reg_lambda, gamma_pen):
    return 0.5 * (G_L**2 / (H_L + reg_lambda) + G_R**2 / (H_R + reg_lambda)
                  - (G_L + G_R) ** 2 / (H_L + H_R + reg_lambda)) - gamma_pen


def leaf_weight(G, H, reg_lambda):
    """Minimizer of G*w + (H + lambda) * w**2 / 2."""
    return -G / (H + reg_lambda)


@njit(cache=True, nogil=True)
def _grow_level_wise(X, order, g, h, features, max_depth, min_child_weight, lam, gamma, eta):
    n = X.shape[0]
    cap = 2 ** (max_depth + 1) - 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    gain = np.zeros(cap)
    cover = np.zeros(cap)
    G = np.zeros(cap)

    node_of = np.zeros(n, np.int64)
    for i in range(n):
        G[0] += g[i]
        cover[0] += h[i]
    frontier = np.zeros(cap, np.int64)
    next_front = np.zeros(cap, np.int64)
    n_front = 1
    n_nodes = 1

    best_gain = np.zeros(cap)
    best_feat = np.full(cap, -1, np.int64)
    best_thr = np.zeros(cap)
    GL = np.zeros(cap)
    HL = np.zeros(cap)
    last_v = np.zeros(cap)
    seen = np.zeros(cap, np.bool_)

    for depth in range(max_depth):
        if n_front == 0:
            break
        for q in range(n_front):
            k = frontier[q]
            best_gain[k] = 0.0
            best_feat[k] = -1
        for f in features:
            for q in range(n_front):
                k = frontier[q]
                GL[k] = 0.0
                HL[k] = 0.0
                seen[k] = False
            for r in order[f]:
                k = node_of[r]
                if k < 0:
                    continue
                v = X[r, f]
                if seen[k] and v > last_v[k]:
                    hl = HL[k]
                    hr = cover[k] - hl
                    if hl >= min_child_weight and hr >= min_child_weight:
                        gl = GL[k]
                        gr = G[k] - gl
                        s = 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam)
                                   - G[k] * G[k] / (cover[k] + lam)) - gamma
                        if s > best_gain[k]:
                            best_gain[k] = s
                            best_feat[k] = f
                            t = 0.5 * (last_v[k] + v)
                            if t >= v:
                                t = last_v[k]
                            best_thr[k] = t
                GL[k] += g[r]
                HL[k] += h[r]
                last_v[k] = v
                seen[k] = True
        # expand nodes with a positive-gain split
        new_front = 0
        for q in range(n_front):
            k = frontier[q]
            if best_feat[k] >= 0:
                feature[k] = best_feat[k]
                threshold[k] = best_thr[k]
                gain[k] = best_gain[k]
                left[k] = n_nodes
                right[k] = n_nodes + 1
                n_nodes += 2
        for i in range(n):
            k = node_of[i]
            if k < 0:
                continue
            if feature[k] < 0:
                node_of[i] = -1
            else:
                c = left[k] if X[i, feature[k]] <= threshold[k] else right[k]
                node_of[i] = c
                G[c] += g[i]
                cover[c] += h[i]
        for q in range(n_front):
            k = frontier[q]
            if feature[k] >= 0:
                next_front[new_front] = left[k]
                next_front[new_front + 1] = right[k]
                new_front += 2
        frontier, next_front = next_front, frontier
        n_front = new_front
    for k in range(n_nodes):
        if feature[k] < 0:
            value[k] = eta * (-G[k] / (cover[k] + lam))
    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes],
            value[:n_nodes], gain[:n_nodes], cover[:n_nodes])


@dataclass(frozen=True, eq=False)
class RegressionTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray   # leaf weights, already scaled by eta
    gain: np.ndarray    # split gain at internal nodes
    cover: np.ndarray   # hessian sum of the node's training rows

    def predict(self, X) -> np.ndarray:
        return self.value[apply_nodes(self.feature, self.threshold, self.left, self.right, as_matrix(X))]

    def to_dict(self) -> dict:
        return self._node_dict(0)

    def _node_dict(self, k: int) -> dict:
        if self.feature[k] < 0:
            return {"leaf": float(self.value[k]), "cover": float(self.cover[k])}
        return {
            "feature": int(self.feature[k]),
            "threshold": float(self.threshold[k]),
            "gain": float(self.gain[k]),
            "cover": float(self.cover[k]),
            "left": self._node_dict(int(self.left[k])),
            "right": self._node_dict(int(self.right[k])),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RegressionTree":
        cols = {k: [] for k in ("feature", "threshold", "left", "right", "value", "gain", "cover")}
        pending = [(doc, -1, "")]
        while pending:
            node, parent, side = pending.pop()
            k = len(cols["feature"])
            if parent >= 0:
                cols[side][parent] = k
            internal = "left" in node
            cols["feature"].append(int(node["feature"]) if internal else -1)
            cols["threshold"].append(float(node["threshold"]) if internal else 0.0)
            cols["gain"].append(float(node["gain"]) if internal else 0.0)
            cols["value"].append(0.0 if internal else float(node["leaf"]))
            cols["cover"].append(float(node["cover"]))
            cols["left"].append(-1)
            cols["right"].append(-1)
            if internal:
                pending.append((node["right"], k, "right"))
                pending.append((node["left"], k, "left"))
        ints = ("feature", "left", "right")
        return cls(**{k: np.array(v, dtype=np.int64 if k in ints else np.float64) for k, v in cols.items()})


@dataclass(frozen=True, eq=False)
class BoostModel:
    trees: list
    base_score: float
    params: XGBParams
    best_round: int
    feature_names: tuple

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "model_type": "xgb",
            "params": asdict(self.params),
            "feature_names": list(self.feature_names),
            "label_coding": {"fraud": FRAUD_CODE, "nonfraud": NONFRAUD_CODE},
            "base_score": self.base_score,
            "best_round": self.best_round,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "BoostModel":
        return cls([RegressionTree.from_dict(t) for t in doc["trees"]], float(doc["base_score"]),
                   XGBParams(**doc["params"]), int(doc["best_round"]), tuple(doc["feature_names"]))

    @property
    def kept_trees(self) -> list:
        return self.trees[: self.best_round]


def grow_regression_tree(X, g, h, features, p: XGBParams, order=None) -> RegressionTree:
    """One boosting tree on gradients ``g`` and hessians ``h``, splitting only on ``features``."""
    X = as_matrix(X)
    if order is None:
        order = np.argsort(X, axis=0, kind="mergesort").T.copy()
    feats = np.unique(np.asarray(features, dtype=np.int64))
    return RegressionTree(*_grow_level_wise(
        X, order, np.ascontiguousarray(g, dtype=np.float64), np.ascontiguousarray(h, dtype=np.float64),
        feats, p.max_depth, float(p.min_child_weight), float(p.reg_lambda), float(p.gamma_pen), float(p.eta)))


def _holdout_split(y: np.ndarray, seed: int, fraction: float = 0.1):
    rng = np.random.default_rng([seed, 0xB0057])
    fit_idx, hold_idx = [], []
    for code in (FRAUD_CODE, NONFRAUD_CODE):
        members = rng.permutation(np.flatnonzero(y == code))
        n_hold = int(round(fraction * len(members)))
        if n_hold == 0 or n_hold == len(members):
            return None
        hold_idx.append(members[:n_hold])
        fit_idx.append(members[n_hold:])
    return np.sort(np.concatenate(fit_idx)), np.sort(np.concatenate(hold_idx))


def train_boost(train: Dataset, p: XGBParams) -> BoostModel:
    """Boost ``p.n_rounds`` trees, stopping early on a stratified 10% holdout's log-loss."""
    if train.n_fraud == 0 or train.n_nonfraud == 0:
        raise ValueError("training data must contain both classes")
    X, y = train.X, train.y.astype(np.float64)
    holdout = None
    if p.early_stop_rounds is not None:
        holdout = _holdout_split(train.y, p.seed)
        if holdout is None:
            log.warning("too few rows per class for an early-stopping holdout; training on all rows")
    if holdout is not None:
        fit_idx, hold_idx = holdout
        X_fit, y_fit = np.ascontiguousarray(X[fit_idx]), y[fit_idx]
        X_hold, y_hold = np.ascontiguousarray(X[hold_idx]), y[hold_idx]
    else:
        X_fit, y_fit = np.ascontiguousarray(X), y

    rate = y_fit.mean()
    base_score = math.log(rate / (1.0 - rate))
    n_cols = X.shape[1]
    n_sampled = min(n_cols, math.ceil(p.colsample * n_cols))
    order = np.argsort(X_fit, axis=0, kind="mergesort").T.copy()
    margin = np.full(len(y_fit), base_score)
    if holdout is not None:
        hold_margin = np.full(len(y_hold), base_score)
        best_loss, best_round, since_best = log_loss(y_hold, hold_margin), 0, 0

    trees = []
    for r in range(p.n_rounds):
        g, h = logistic_grad_hess(y_fit, margin)
        rng = np.random.default_rng([p.seed, r])
        features = np.sort(rng.choice(n_cols, size=n_sampled, replace=False))
        tree = grow_regression_tree(X_fit, g, h, features, p, order=order)
        trees.append(tree)
        margin += tree.predict(X_fit)
        if holdout is None:
            continue
        hold_margin += tree.predict(X_hold)
        loss = log_loss(y_hold, hold_margin)
        if loss < best_loss:
            best_loss, best_round, since_best = loss, r + 1, 0
        else:
            since_best += 1
            if since_best >= p.early_stop_rounds:
                break
    if holdout is None:
        best_round = len(trees)
    return BoostModel(trees, base_score, p, best_round, train.feature_names)


def staged_margin(m: BoostModel, X) -> Iterator[np.ndarray]:
    """Fraud-logit margins after 0, 1, ..., len(m.trees) trees."""
    X = as_matrix(X)
    margin = np.full(X.shape[0], m.base_score)
    yield margin.copy()
    for tree in m.trees:
        margin += tree.predict(X)
        yield margin.copy()


def boost_margin(m: BoostModel, X) -> np.ndarray:
    X = as_matrix(X)
    margin = np.full(X.shape[0], m.base_score)
    for tree in m.kept_trees:
        margin += tree.predict(X)
    return margin


def boost_proba(m: BoostModel, X) -> np.ndarray:
    """Non-fraud probability, 1 - sigmoid(fraud logit), using trees up to ``best_round``."""
    return 1.0 - sigmoid(boost_margin(m, X))


def gain_importance(m: BoostModel) -> tuple[np.ndarray, np.ndarray]:
    raw = np.zeros(len(m.feature_names))
    for tree in m.kept_trees:
        internal = tree.feature >= 0
        np.add.at(raw, tree.feature[internal], tree.gain[internal])
    total = raw.sum()
    return raw, (raw / total if total > 0 else np.zeros_like(raw))


def without_early_stopping(p: XGBParams) -> XGBParams:
    return replace(p, early_stop_rounds=None)
