"""Soft-margin RBF SVM trained by sequential minimal optimization.

Fraud is coded +1. Class imbalance is handled with per-class box constraints:
fraud rows get ``C * class_weight_fraud``, the rest ``C``. Working pairs are
chosen by maximal KKT violation with second-order selection of the partner
(Fan, Chen & Lin 2005); training stops once the violation gap is below
``tolerance``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from functools import lru_cache
from typing import Callable

import numpy as np

from .dataset import FRAUD_CODE, NONFRAUD_CODE, Dataset, Standardizer

TAU = 1e-12


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class SVMParams:
    cost: float = 1.0
    gamma: float = 0.077
    class_weight_fraud: float | None = None  # None: n_nonfraud / n_fraud of the training set
    tolerance: float = 1e-3
    max_iter: int = 1_000_000
    cache_rows: int = 1024

    def __post_init__(self):
        if self.cost <= 0 or self.gamma <= 0:
            raise ValueError("cost and gamma must be positive")
        if self.class_weight_fraud is not None and self.class_weight_fraud < 1:
            raise ValueError("class_weight_fraud must be at least 1")
        if self.tolerance <= 0 or self.max_iter < 1 or self.cache_rows < 2:
            raise ValueError("tolerance, max_iter and cache_rows must be positive")


def rbf_kernel(x, z, gamma: float) -> float:
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x.shape != z.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {z.shape}")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    d = x - z
    return float(np.exp(-gamma * np.dot(d, d)))


def rbf_matrix(A, B, gamma: float) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


@dataclass(frozen=True)
class SMOResult:
    alpha: np.ndarray
    bias: float
    n_iter: int
    gap: float


def dual_objective(alpha, grad) -> float:
    """Dual objective sum(alpha) - alpha'Q alpha / 2, from the gradient Q alpha - 1."""
    return float(-0.5 * alpha @ (grad - 1.0))


def smo_solve(X, y, upper, gamma: float, tol: float = 1e-3, max_iter: int = 1_000_000,
              cache_rows: int = 1024, on_step: Callable | None = None) -> SMOResult:
    """Maximize the SVM dual for labels ``y`` in {-1, +1} and per-row bounds ``upper``.

    ``on_step(alpha, grad)`` is called after every pair update.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    C = np.asarray(upper, dtype=np.float64)
    n = len(y)
    sq = (X * X).sum(1)

    @lru_cache(maxsize=cache_rows)
    def kernel_row(i: int) -> np.ndarray:
        return np.exp(-gamma * np.maximum(sq + sq[i] - 2.0 * (X @ X[i]), 0.0))

    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of alpha'Q alpha / 2 - sum(alpha)
    pos = y > 0
    for it in range(max_iter):
        at_upper = alpha >= C
        at_lower = alpha <= 0
        in_up = np.where(pos, ~at_upper, ~at_lower)
        in_low = np.where(pos, ~at_lower, ~at_upper)
        score = -y * grad
        up_scores = np.where(in_up, score, -np.inf)
        low_scores = np.where(in_low, score, np.inf)
        i = int(np.argmax(up_scores))
        m = up_scores[i]
        M = low_scores.min()
        if m - M < tol:
            return SMOResult(alpha, _bias(alpha, grad, y, C), it, float(m - M))
        Ki = kernel_row(i)
        cand = in_low & (score < m)
        b = m - score
        a = np.where(2.0 - 2.0 * Ki > 0, 2.0 - 2.0 * Ki, TAU)  # K(t,t) = 1 for the RBF kernel
        j = int(np.argmin(np.where(cand, -(b * b) / a, np.inf)))
        Kj = kernel_row(j)

        old_i, old_j = alpha[i], alpha[j]
        Ci, Cj = C[i], C[j]
        if y[i] != y[j]:
            quad = max(2.0 - 2.0 * Ki[j], TAU)
            delta = (-grad[i] - grad[j]) / quad
            diff = old_i - old_j
            ai, aj = old_i + delta, old_j + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > Ci - Cj:
                if ai > Ci:
                    ai, aj = Ci, Ci - diff
            elif aj > Cj:
                aj, ai = Cj, Cj + diff
        else:
            quad = max(2.0 - 2.0 * Ki[j], TAU)
            delta = (grad[i] - grad[j]) / quad
            total = old_i + old_j
            ai, aj = old_i - delta, old_j + delta
            if total > Ci:
                if ai > Ci:
                    ai, aj = Ci, total - Ci
            elif aj < 0:
                aj, ai = 0.0, total
            if total > Cj:
                if aj > Cj:
                    aj, ai = Cj, total - Cj
            elif ai < 0:
                ai, aj = 0.0, total
        alpha[i], alpha[j] = ai, aj
        grad += y * (y[i] * (ai - old_i) * Ki + y[j] * (aj - old_j) * Kj)
        if on_step is not None:
            on_step(alpha, grad)
    raise ConvergenceError(f"SMO did not reach gap < {tol} within {max_iter} iterations")


def _bias(alpha, grad, y, C) -> float:
    yg = y * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = yg[free].mean()
    else:
        at_upper = alpha >= C
        ub_mask = np.where(y < 0, at_upper, ~at_upper)
        lb_mask = ~ub_mask
        ub = yg[ub_mask].min() if ub_mask.any() else np.inf
        lb = yg[lb_mask].max() if lb_mask.any() else -np.inf
        rho = 0.5 * (ub + lb)
    return float(-rho)


@dataclass(frozen=True, eq=False)
class SVMModel:
    support_vectors: np.ndarray  # standardized coordinates
    coef: np.ndarray             # alpha_i * y_i
    bias: float
    params: SVMParams            # class weight resolved
    standardizer: Standardizer | None
    feature_names: tuple
    n_iter: int = 0

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "model_type": "svm",
            "params": asdict(self.params),
            "feature_names": list(self.feature_names),
            "label_coding": {"fraud": 1, "nonfraud": -1},
            "standardizer": None if self.standardizer is None else self.standardizer.to_dict(),
            "bias": self.bias,
            "n_iter": self.n_iter,
            "support_vectors": [{"x": sv.tolist(), "coef": float(c)}
                                for sv, c in zip(self.support_vectors, self.coef)],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SVMModel":
        n_feat = len(doc["feature_names"])
        svs = np.array([s["x"] for s in doc["support_vectors"]], dtype=np.float64).reshape(-1, n_feat)
        coef = np.array([s["coef"] for s in doc["support_vectors"]], dtype=np.float64)
        std = doc.get("standardizer")
        return cls(svs, coef, float(doc["bias"]), SVMParams(**doc["params"]),
                   None if std is None else Standardizer.from_dict(std),
                   tuple(doc["feature_names"]), int(doc.get("n_iter", 0)))


def train_svm(train: Dataset, p: SVMParams, standardizer: Standardizer | None = None,
              on_step: Callable | None = None) -> SVMModel:
    """Fit on ``train``; with a standardizer the rows are scaled by it first,
    otherwise they are taken as already standardized."""
    if train.n_fraud == 0 or train.n_nonfraud == 0:
        raise ValueError("training data must contain both classes")
    weight = p.class_weight_fraud
    if weight is None:
        weight = max(1.0, train.n_nonfraud / train.n_fraud)
    p = replace(p, class_weight_fraud=float(weight))
    X = train.X if standardizer is None else standardizer.transform(train.X)
    y = np.where(train.y == FRAUD_CODE, 1.0, -1.0)
    upper = np.where(y > 0, p.cost * weight, p.cost)
    res = smo_solve(X, y, upper, p.gamma, tol=p.tolerance, max_iter=p.max_iter,
                    cache_rows=p.cache_rows, on_step=on_step)
    sv = res.alpha > 0
    return SVMModel(np.ascontiguousarray(X[sv]), res.alpha[sv] * y[sv], res.bias, p,
                    standardizer, train.feature_names, res.n_iter)


def decision_function(m: SVMModel, X, block: int = 4096) -> np.ndarray:
    """f(x) = sum_i alpha_i y_i k(x_i, x) + b for raw (unscaled) rows of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if m.standardizer is not None:
        X = m.standardizer.transform(X)
    out = np.empty(X.shape[0])
    for s in range(0, X.shape[0], block):
        out[s:s + block] = rbf_matrix(X[s:s + block], m.support_vectors, m.params.gamma) @ m.coef + m.bias
    return out


def classify_svm(f):
    """Fraud where f >= 0."""
    out = np.where(np.asarray(f) >= 0, FRAUD_CODE, NONFRAUD_CODE)
    return int(out) if out.ndim == 0 else out
