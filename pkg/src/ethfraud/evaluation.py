"""Confusion matrices, percentage metrics, k-fold cross-validation and grid search.

Fraud is the positive class. Metrics are percentages; a metric whose
denominator is zero is ``None`` (written as ``NA``), never a silent 0.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from .dataset import FRAUD_CODE, Dataset, kfold_indices
from .models import fit_model, params_from_dict, predict_labels, training_key

log = logging.getLogger(__name__)

METRIC_NAMES = ("specificity", "recall", "precision", "fpr", "f1")
METRIC_HEADERS = ("Specificity", "Recall", "Precision", "FPR", "F1")
NA = "NA"

RF_REFERENCE_GRID = [
    {"mtry": mtry, "min_node_size": mns, "cutoff": cutoff}
    for cutoff in (0.5, 0.65, 0.8, 0.9, 0.99)
    for mns in (1, 10)
    for mtry in (3, 6)
]

SVM_REFERENCE_GRID = [
    {"cost": cost, "gamma": gamma}
    for cost in (1.0, 5.0, 10.0, 50.0)
    for gamma in (0.077, 0.1, 0.5, 1.0, 2.0)
]

# (max_depth, colsample, min_child_weight, cutoff) of the 20 reported boosting configurations
XGB_REFERENCE_GRID = [
    {"max_depth": d, "colsample": c, "min_child_weight": w, "cutoff": p}
    for d, c, w, p in [
        (6, 0.25, 1, 0.50), (9, 0.25, 1, 0.50), (3, 0.25, 2, 0.50), (3, 0.25, 1, 0.50),
        (3, 0.50, 1, 0.50), (6, 0.50, 1, 0.50), (9, 0.50, 1, 0.50), (3, 0.75, 1, 0.50),
        (6, 0.75, 1, 0.50), (9, 0.75, 1, 0.50), (3, 0.50, 8, 0.99), (3, 0.25, 8, 0.99),
        (3, 0.25, 4, 0.99), (3, 0.50, 4, 0.99), (3, 1.00, 4, 0.99), (3, 1.00, 8, 0.99),
        (3, 0.25, 1, 0.99), (3, 0.75, 8, 0.99), (3, 0.25, 2, 0.99), (3, 0.75, 4, 0.99),
    ]
]

REFERENCE_GRIDS = {"rf": RF_REFERENCE_GRID, "svm": SVM_REFERENCE_GRID, "xgb": XGB_REFERENCE_GRID}


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")
        if self.total == 0:
            raise ValueError("empty confusion matrix")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class Metrics:
    specificity: float | None
    recall: float | None
    precision: float | None
    fpr: float | None
    f1: float | None

    def get(self, name: str) -> float | None:
        return getattr(self, name)

    def rounded(self, digits: int = 2) -> "Metrics":
        return Metrics(*(None if v is None else round(v, digits) for v in self.values()))

    def values(self) -> tuple:
        return tuple(getattr(self, n) for n in METRIC_NAMES)


def confusion(predicted, actual) -> ConfusionMatrix:
    predicted = np.asarray(predicted)
    actual = np.asarray(actual)
    if predicted.shape != actual.shape:
        raise ValueError(f"length mismatch: {predicted.shape} vs {actual.shape}")
    if predicted.size == 0:
        raise ValueError("no predictions")
    pf = predicted == FRAUD_CODE
    af = actual == FRAUD_CODE
    return ConfusionMatrix(int((pf & af).sum()), int((pf & ~af).sum()),
                           int((~pf & af).sum()), int((~pf & ~af).sum()))


def _pct(num: int, den: int) -> float | None:
    return None if den == 0 else 100.0 * num / den


def metrics(cm: ConfusionMatrix) -> Metrics:
    recall = _pct(cm.tp, cm.tp + cm.fn)
    precision = _pct(cm.tp, cm.tp + cm.fp)
    if recall is None or precision is None:
        f1 = None
    elif recall + precision == 0:
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return Metrics(
        specificity=_pct(cm.tn, cm.tn + cm.fp),
        recall=recall,
        precision=precision,
        fpr=_pct(cm.fp, cm.fp + cm.tn),
        f1=f1,
    )


def mean_metrics(items: Sequence[Metrics]) -> Metrics:
    """Arithmetic mean of each metric over the items where it is defined."""
    out = []
    for name in METRIC_NAMES:
        vals = [m.get(name) for m in items if m.get(name) is not None]
        out.append(float(np.mean(vals)) if vals else None)
    return Metrics(*out)


def evaluate(model, d: Dataset, cutoff: float | None = None) -> tuple[ConfusionMatrix, Metrics]:
    cm = confusion(predict_labels(model, d.X, cutoff), d.y)
    return cm, metrics(cm)


class FoldError(RuntimeError):
    def __init__(self, fold: int, exc: Exception):
        super().__init__(f"fold {fold}: {type(exc).__name__}: {exc}")
        self.fold = fold


@dataclass
class CVResult:
    folds: list
    confusions: list
    mean: Metrics


class _ModelCache:
    """Trained models keyed by (fold, parameters sans cutoff): the cutoff never affects training."""

    def __init__(self, threads: int):
        self.threads = threads
        self._models = {}

    def get(self, fold, params, train: Dataset):
        key = (fold, training_key(params))
        if key not in self._models:
            self._models[key] = fit_model(params, train, threads=self.threads)
        return self._models[key]

    def drop_except(self, keep_key):
        self._models = {k: v for k, v in self._models.items() if k[1] == keep_key}


def _cross_validate(params, d: Dataset, folds, cache: _ModelCache) -> CVResult:
    everything = np.arange(len(d))
    per_fold, cms = [], []
    for i, hold in enumerate(folds):
        train, holdout = d.subset(np.setdiff1d(everything, hold)), d.subset(hold)
        try:
            model = cache.get(i, params, train)
            cm = confusion(predict_labels(model, holdout.X, getattr(params, "cutoff", None)), holdout.y)
        except Exception as exc:
            raise FoldError(i, exc) from exc
        cms.append(cm)
        per_fold.append(metrics(cm))
    return CVResult(per_fold, cms, mean_metrics(per_fold))


def cross_validate(params, d: Dataset, k: int = 10, seed: int = 0, threads: int = 1) -> CVResult:
    """Stratified k-fold CV of one parameter set; fold metrics and their mean."""
    return _cross_validate(params, d, kfold_indices(d.y, k, seed), _ModelCache(threads))


@dataclass
class GridRow:
    config: dict
    params: object = None
    cv: CVResult | None = None
    validation: tuple | None = None  # (ConfusionMatrix, Metrics) on a held-out set
    error: str | None = None

    def metric(self, name: str, source: str = "cv") -> float | None:
        if source == "cv":
            return None if self.cv is None else self.cv.mean.get(name)
        return None if self.validation is None else self.validation[1].get(name)


@dataclass
class GridResult:
    family: str
    rows: list = field(default_factory=list)


def grid_search(family: str, grid: Sequence[dict], d: Dataset, k: int = 10, seed: int = 0,
                threads: int = 1, base: dict | None = None, validation: Dataset | None = None) -> GridResult:
    """Cross-validate every configuration on the same folds, in grid order.

    ``base`` supplies parameters shared by all configurations (e.g. n_trees,
    seed). With ``validation`` each configuration is also trained on all of
    ``d`` and scored on the held-out set. A failing configuration records its
    error and does not affect the others.
    """
    if not grid:
        raise ValueError("empty grid")
    folds = kfold_indices(d.y, k, seed)
    cache = _ModelCache(threads)
    full_cache = _ModelCache(threads)
    result = GridResult(family)
    # configurations sharing training parameters run back to back so each model is trained once
    keys = []
    for config in grid:
        try:
            keys.append(training_key(params_from_dict(family, {**(base or {}), **config})))
        except Exception:
            keys.append(None)
    first = {}
    for i, key in enumerate(keys):
        if key is not None:
            first.setdefault(key, i)
    order = sorted(range(len(grid)), key=lambda i: (first.get(keys[i], i), i))
    rows: dict[int, GridRow] = {}
    for i in order:
        config = dict(grid[i])
        row = GridRow(config)
        try:
            row.params = params_from_dict(family, {**(base or {}), **config})
            cache.drop_except(training_key(row.params))
            full_cache.drop_except(training_key(row.params))
            row.cv = _cross_validate(row.params, d, folds, cache)
            if validation is not None:
                model = full_cache.get("full", row.params, d)
                row.validation = evaluate(model, validation, getattr(row.params, "cutoff", None))
        except Exception as exc:
            log.warning("configuration %d (%s) failed: %s", i + 1, config, exc)
            row.error = f"{type(exc).__name__}: {exc}"
        rows[i] = row
    result.rows = [rows[i] for i in range(len(grid))]
    return result


CRITERIA = {
    "max_recall": ("recall", lambda a, b: a > b),
    "min_fpr": ("fpr", lambda a, b: a < b),
    "max_f1": ("f1", lambda a, b: a > b),
}


def select_config(gr: GridResult, criterion: str, source: str = "cv") -> GridRow:
    """Best row by ``criterion``; ties go to the earlier grid position."""
    try:
        name, better = CRITERIA[criterion]
    except KeyError:
        raise ValueError(f"unknown criterion {criterion!r}; expected one of {sorted(CRITERIA)}") from None
    best = None
    for row in gr.rows:
        v = row.metric(name, source)
        if v is None:
            continue
        if best is None or better(v, best[0]):
            best = (v, row)
    if best is None:
        raise ValueError(f"no configuration has {name} defined")
    return best[1]


# --------------------------------------------------------------------------- reports


def _fmt(v) -> str:
    return NA if v is None else f"{v:.2f}"


def write_grid_report(path, gr: GridResult, source: str = "cv") -> None:
    """CSV mirroring the result tables: configuration columns, then the five metrics."""
    keys = []
    for row in gr.rows:
        keys += [k for k in row.config if k not in keys]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["conf", *keys, *METRIC_HEADERS, "error"])
        for i, row in enumerate(gr.rows, start=1):
            m = row.cv.mean if source == "cv" and row.cv else (
                row.validation[1] if source == "validation" and row.validation else None)
            vals = [NA] * 5 if m is None else [_fmt(v) for v in m.values()]
            w.writerow([f"Conf.{i}", *(row.config.get(k, "") for k in keys), *vals, row.error or ""])


def write_metrics_report(path, rows: Sequence[tuple[str, Metrics]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", *METRIC_HEADERS])
        for name, m in rows:
            w.writerow([name, *(_fmt(v) for v in m.values())])


def write_confusion(path, cm: ConfusionMatrix) -> None:
    """Prediction rows by actual-value columns, with totals."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["prediction", "actual_fraud", "actual_nonfraud", "total"])
        w.writerow(["fraud", cm.tp, cm.fp, cm.tp + cm.fp])
        w.writerow(["nonfraud", cm.fn, cm.tn, cm.fn + cm.tn])
        w.writerow(["total", cm.tp + cm.fn, cm.fp + cm.tn, cm.total])


def params_dict(params) -> dict:
    return {f.name: getattr(params, f.name) for f in fields(params)}

