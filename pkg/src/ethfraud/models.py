"""Uniform fit / predict / save / load over the three model families."""

from __future__ import annotations

import json
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .boost import BoostModel, XGBParams, boost_proba, train_boost
from .dataset import Dataset, fit_standardizer
from .forest import ForestModel, RFParams, classify, forest_proba, train_forest
from .svm import SVMModel, SVMParams, classify_svm, decision_function, train_svm

FAMILIES = {"rf": RFParams, "xgb": XGBParams, "svm": SVMParams}
FORMAT_VERSION = 1


def params_from_dict(family: str, cfg: dict):
    try:
        cls = FAMILIES[family]
    except KeyError:
        raise ValueError(f"unknown model family {family!r}; expected one of {sorted(FAMILIES)}") from None
    known = {f.name for f in fields(cls)}
    unknown = set(cfg) - known
    if unknown:
        raise ValueError(f"unknown {family} parameters: {sorted(unknown)}")
    return cls(**cfg)


def family_of(obj) -> str:
    for name, cls in FAMILIES.items():
        if isinstance(obj, cls):
            return name
    if isinstance(obj, ForestModel):
        return "rf"
    if isinstance(obj, BoostModel):
        return "xgb"
    if isinstance(obj, SVMModel):
        return "svm"
    raise TypeError(f"not a model or parameter set: {type(obj).__name__}")


def training_key(params):
    """Parameters with the decision cutoff neutralized: models sharing a key are identical."""
    return replace(params, cutoff=0.5) if hasattr(params, "cutoff") else params


def fit_model(params, train: Dataset, threads: int = 1):
    """Train the family matching ``params``. SVMs get a standardizer fitted on ``train``."""
    family = family_of(params)
    if family == "rf":
        return train_forest(train, params, threads=threads)
    if family == "xgb":
        return train_boost(train, params)
    return train_svm(train, params, standardizer=fit_standardizer(train))


def nonfraud_proba(model, X) -> np.ndarray:
    if isinstance(model, ForestModel):
        return forest_proba(model, X)
    if isinstance(model, BoostModel):
        return boost_proba(model, X)
    raise TypeError("SVM models produce hard labels only")


def predict_labels(model, X, cutoff: float | None = None) -> np.ndarray:
    """0/1 fraud labels; ``cutoff`` overrides the model's own (ignored for SVM)."""
    if isinstance(model, SVMModel):
        return classify_svm(decision_function(model, X))
    c = model.params.cutoff if cutoff is None else cutoff
    return classify(nonfraud_proba(model, X), c)


def model_to_dict(model) -> dict:
    return model.to_dict()


def model_from_dict(doc: dict):
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported model format_version {version!r}")
    kind = doc.get("model_type")
    if kind == "rf":
        return ForestModel.from_dict(doc)
    if kind == "xgb":
        return BoostModel.from_dict(doc)
    if kind == "svm":
        return SVMModel.from_dict(doc)
    raise ValueError(f"unknown model_type {kind!r}")


def dumps_model(model) -> str:
    return json.dumps(model_to_dict(model), separators=(",", ":")) + "\n"


def save_model(model, path) -> None:
    Path(path).write_text(dumps_model(model), encoding="utf-8")


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
