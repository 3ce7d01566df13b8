"""Feature-importance ranking and top-n feature ablation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .boost import BoostModel, XGBParams, gain_importance
from .dataset import Dataset
from .evaluation import ConfusionMatrix, Metrics, evaluate
from .forest import ForestModel, RFParams, gini_importance
from .models import fit_model
from .svm import SVMModel

DEFAULT_ABLATIONS = (2, 4, 8)


@dataclass(frozen=True)
class ImportanceReport:
    entries: tuple  # (feature name, raw score, normalized score), most important first

    @property
    def names(self) -> list[str]:
        return [e[0] for e in self.entries]

    def top(self, n: int) -> list[str]:
        return self.names[:n]


def rank_features(model) -> ImportanceReport:
    if isinstance(model, ForestModel):
        raw, norm = gini_importance(model)
    elif isinstance(model, BoostModel):
        raw, norm = gain_importance(model)
    elif isinstance(model, SVMModel):
        raise TypeError("feature importance is not supported for SVM models")
    else:
        raise TypeError(f"unsupported model type {type(model).__name__}")
    entries = sorted(zip(model.feature_names, raw.tolist(), norm.tolist()), key=lambda e: (-e[1], e[0]))
    return ImportanceReport(tuple(entries))


def write_importance(path, report: ImportanceReport) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "raw", "normalized"])
        for name, raw, norm in report.entries:
            w.writerow([name, repr(raw), repr(norm)])


def read_importance(path) -> ImportanceReport:
    with open(Path(path), newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return ImportanceReport(tuple((r["feature"], float(r["raw"]), float(r["normalized"])) for r in rows))


@dataclass(frozen=True)
class AblationResult:
    n_excluded: int
    excluded: tuple
    confusion: ConfusionMatrix
    metrics: Metrics


def ablation_params(params, n_features: int):
    """Parameters re-fitted to a reduced feature set.

    Boosting always runs its full round budget (no early stopping) when
    ablating; a forest's mtry is capped at the number of remaining features.
    """
    if isinstance(params, XGBParams):
        return replace(params, early_stop_rounds=None)
    if isinstance(params, RFParams) and params.mtry > n_features:
        return replace(params, mtry=n_features)
    return params


def ablate(d_train: Dataset, d_val: Dataset, params, importance: ImportanceReport, n: int,
           threads: int = 1) -> AblationResult:
    """Drop the ``n`` most important features, re-train with the same seed, score on validation."""
    if not 0 <= n < d_train.n_features:
        raise ValueError(f"n must lie in [0, {d_train.n_features}), got {n}")
    excluded = tuple(importance.top(n))
    train, val = d_train.drop_features(excluded), d_val.drop_features(excluded)
    model = fit_model(ablation_params(params, train.n_features), train, threads=threads)
    cm, m = evaluate(model, val)
    return AblationResult(n, excluded, cm, m)


def ablation_study(d_train: Dataset, d_val: Dataset, params, importance: ImportanceReport,
                   ns: Sequence[int] = DEFAULT_ABLATIONS, threads: int = 1) -> list[AblationResult]:
    return [ablate(d_train, d_val, params, importance, n, threads=threads) for n in ns]


def write_ablation(path, label: str, results: Sequence[AblationResult]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["configuration", "n", "excluded", "Specificity", "Recall", "Precision", "FPR", "F1"])
        for r in results:
            vals = ["NA" if v is None else f"{v:.2f}" for v in r.metrics.values()]
            w.writerow([f"{label} (n = {r.n_excluded})", r.n_excluded, " ".join(r.excluded), *vals])


def mean_f1(results: Sequence[AblationResult]) -> float:
    vals = [r.metrics.f1 for r in results if r.metrics.f1 is not None]
    return float(np.mean(vals)) if vals else float("nan")
