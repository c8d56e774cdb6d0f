"""Baseline classifier battery behind one fit / predict_proba contract."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from ..errors import ConfigError, DataError, LayoutMismatchError, SingleClassError
from .base import Estimator
from .boosting import GradientBoosting
from .ensemble import AdaBoost, DecisionTree, ExtraTrees, RandomForest
from .linear import LDA, LinearRegression, LogisticRegression
from .mlp import MLP
from .neighbors import KNN

ESTIMATORS: dict[str, type[Estimator]] = {
    cls.kind: cls
    for cls in (
        LinearRegression, LogisticRegression, KNN, LDA, DecisionTree,
        ExtraTrees, RandomForest, AdaBoost, GradientBoosting, MLP,
    )
}
KINDS = tuple(ESTIMATORS)

DEFAULT_HYPERPARAMETERS: dict[str, dict[str, Any]] = {
    "linreg": {"ridge": 1e-8},
    "logreg": {"l2": 1e-4, "learning_rate": 0.1, "max_iter": 1000, "tol": 1e-8, "standardize": True},
    "knn": {"k": 5, "standardize": True},
    "lda": {"ridge_scale": 1e-6},
    "dtree": {"max_depth": 12, "min_samples_split": 2, "max_features": None},
    "random_forest": {
        "n_trees": 100, "max_depth": None, "min_samples_split": 2,
        "max_features": "sqrt", "bootstrap": True,
    },
    "extra_trees": {
        "n_trees": 100, "max_depth": None, "min_samples_split": 2,
        "max_features": "sqrt", "bootstrap": False,
    },
    "adaboost": {"n_rounds": 50, "learning_rate": 1.0, "max_alpha": 35.0},
    "gbdt": {
        "n_rounds": 100, "learning_rate": 0.1, "max_depth": 3, "reg_lambda": 1.0,
        "min_child_weight": 1.0, "gamma": 0.0, "max_features": None,
    },
    "mlp": {
        "hidden": 32, "learning_rate": 0.01, "momentum": 0.9, "batch_size": 32,
        "epochs": 200, "standardize": True,
    },
}

_POS_INT = {"k", "n_trees", "max_iter", "hidden", "batch_size", "epochs", "n_rounds"}
_NONNEG_INT = {"n_rounds", "epochs"}
_POS_REAL = {"learning_rate", "max_alpha", "tol"}
_NONNEG_REAL = {"ridge", "l2", "ridge_scale", "reg_lambda", "min_child_weight", "gamma", "momentum"}


def _is_int(v) -> bool:
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool)


def validate_hyperparameters(kind: str, given: Mapping[str, Any]) -> dict[str, Any]:
    if kind not in DEFAULT_HYPERPARAMETERS:
        raise ConfigError(f"unknown classifier kind {kind!r}; expected one of {KINDS}")
    defaults = DEFAULT_HYPERPARAMETERS[kind]
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"{kind}: unknown hyperparameter(s) {sorted(unknown)}")
    params = {**defaults, **given}
    for key, v in params.items():
        bad = False
        if key in _NONNEG_INT:
            bad = not _is_int(v) or v < 0
        elif key in _POS_INT:
            bad = not _is_int(v) or v < 1
        elif key in _POS_REAL:
            bad = not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0
        elif key in _NONNEG_REAL:
            bad = not isinstance(v, (int, float)) or isinstance(v, bool) or not v >= 0
        elif key == "max_depth":
            bad = v is not None and (not _is_int(v) or v < 0)
        elif key == "min_samples_split":
            bad = not _is_int(v) or v < 2
        elif key in ("standardize", "bootstrap"):
            bad = not isinstance(v, bool)
        elif key == "max_features":
            bad = not (
                v is None or v in ("sqrt", "log2")
                or (_is_int(v) and v >= 1)
                or (isinstance(v, float) and 0 < v <= 1)
            )
        if bad:
            raise ConfigError(f"{kind}: invalid value {v!r} for hyperparameter {key!r}")
    if kind == "mlp" and not params["momentum"] < 1:
        raise ConfigError("mlp: momentum must be < 1")
    return params


@dataclass(frozen=True)
class ClassifierSpec:
    kind: str
    hyperparameters: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "hyperparameters", dict(self.hyperparameters))
        validate_hyperparameters(self.kind, self.hyperparameters)
        if not _is_int(self.seed):
            raise ConfigError("seed must be an integer")

    @property
    def resolved(self) -> dict[str, Any]:
        return validate_hyperparameters(self.kind, self.hyperparameters)

    def with_seed(self, seed: int) -> "ClassifierSpec":
        return ClassifierSpec(self.kind, self.hyperparameters, int(seed))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "hyperparameters": dict(self.hyperparameters), "seed": int(self.seed)}

    @classmethod
    def from_dict(cls, obj) -> "ClassifierSpec":
        if isinstance(obj, str):
            return cls(obj)
        try:
            return cls(obj["kind"], obj.get("hyperparameters", {}), obj.get("seed", 0))
        except (KeyError, TypeError, AttributeError) as exc:
            raise ConfigError(f"malformed classifier spec {obj!r}: {exc}") from None


def layout_fingerprint(n_features: int, layout=None) -> str:
    desc = json.dumps(
        {
            "n": int(n_features),
            "layout": [
                [e.name, e.offset, e.dim] if hasattr(e, "name") else list(map(str, e))
                for e in (layout or [])
            ],
        },
        sort_keys=True,
    )
    return hashlib.sha256(desc.encode()).hexdigest()[:16]


@dataclass(eq=False)
class TrainedModel:
    spec: ClassifierSpec
    estimator: Estimator
    n_features: int
    fingerprint: str

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise LayoutMismatchError(
                f"model expects {self.n_features} features, got shape {X.shape}"
            )
        if not np.isfinite(X).all():
            raise DataError("features contain missing or non-finite values")
        return X

    def predict_proba(self, X) -> np.ndarray:
        X = self._check(X)
        if X.shape[0] == 0:
            return np.empty(0)
        return np.clip(self.estimator.predict_proba(X), 0.0, 1.0)

    def predict(self, X) -> np.ndarray:
        X = self._check(X)
        if X.shape[0] == 0:
            return np.empty(0, dtype=np.int64)
        return self.estimator.predict(X)

    __call__ = predict_proba


def fit(spec: ClassifierSpec, features, labels, n_jobs: int = 1, layout=None) -> TrainedModel:
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if X.ndim != 2:
        raise DataError("features must be a 2-D matrix")
    if y.shape != (X.shape[0],):
        raise DataError("labels must have one entry per row")
    if X.shape[0] < 2:
        raise DataError("need at least 2 training rows")
    if not np.isfinite(X).all():
        raise DataError("features contain missing or non-finite values")
    if not np.isin(y, (0, 1)).all():
        raise DataError("labels must be binary 0/1")
    y = y.astype(np.int64)
    if spec.kind != "linreg" and np.unique(y).size < 2:
        raise SingleClassError(f"{spec.kind} needs both classes in the training labels")
    est = ESTIMATORS[spec.kind](**spec.resolved)
    est.fit(X, y, seed=spec.seed, n_jobs=max(1, int(n_jobs)))
    return TrainedModel(spec, est, X.shape[1], layout_fingerprint(X.shape[1], layout))


def predict_proba(model: TrainedModel, features) -> np.ndarray:
    return model.predict_proba(features)


def predict(model: TrainedModel, features) -> np.ndarray:
    return model.predict(features)


MODEL_FORMAT = "stresskit-model"
MODEL_VERSION = 1


def save_model(model: TrainedModel, path: str | os.PathLike) -> None:
    obj = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "spec": model.spec.to_dict(),
        "n_features": model.n_features,
        "fingerprint": model.fingerprint,
        "state": model.estimator.get_state(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, separators=(",", ":"), allow_nan=False)


def load_model(path: str | os.PathLike) -> TrainedModel:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    if obj.get("format") != MODEL_FORMAT or obj.get("version") != MODEL_VERSION:
        raise DataError(f"{path}: not a {MODEL_FORMAT} v{MODEL_VERSION} file")
    spec = ClassifierSpec.from_dict(obj["spec"])
    est = ESTIMATORS[spec.kind](**spec.resolved)
    est.set_state(obj["state"])
    return TrainedModel(spec, est, int(obj["n_features"]), obj["fingerprint"])


__all__ = [
    "KINDS", "DEFAULT_HYPERPARAMETERS", "ClassifierSpec", "TrainedModel",
    "fit", "predict", "predict_proba", "save_model", "load_model", "validate_hyperparameters",
]
