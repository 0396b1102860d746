"""Uniform fit/predict over the five throughput predictors, plus JSON persistence."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Any, Mapping

import numpy as np
import pandas as pd

from ..features import DEFAULT_REM_RESOLUTION, LearningTable, RadioEnvironmentMap, _grid_keys
from . import mlp as _mlp
from . import trees as _trees

KINDS = ("rem_baseline", "linear", "random_forest", "gradient_boosting", "mlp", "tree")
FORMAT_VERSION = 1

DEFAULTS: dict[str, dict[str, Any]] = {
    "rem_baseline": {"resolution_deg": DEFAULT_REM_RESOLUTION},
    "linear": {},
    "random_forest": {"n_estimators": 793, "max_depth": 19, "max_features": "third",
                      "min_samples_leaf": 2, "max_bins": 255, "bootstrap": True},
    "gradient_boosting": {"n_estimators": 715, "max_depth": 10, "learning_rate": 0.05,
                          "min_samples_leaf": 5, "max_bins": 255},
    "mlp": {"hidden": (256, 128, 64, 32), "learning_rate": 1e-3, "batch_size": 16,
            "patience": 8, "max_epochs": 200, "val_fraction": 0.1},
    # a single unpruned CART tree; not one of the benchmarked models
    "tree": {"max_depth": None, "min_samples_leaf": 1, "max_bins": None},
}


class SchemaMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        unknown = set(self.params) - set(DEFAULTS[self.kind])
        if unknown:
            raise ValueError(f"unknown hyperparameter {sorted(unknown)[0]!r} for {self.kind}")

    @property
    def resolved(self) -> dict[str, Any]:
        return {**DEFAULTS[self.kind], **dict(self.params)}


@dataclass(frozen=True, eq=False)
class FittedModel:
    kind: str
    columns: tuple[str, ...]
    params: Mapping[str, Any]
    hyperparameters: Mapping[str, Any]
    seed: int = 0

    def __post_init__(self):
        frozen = {}
        for k, v in self.params.items():
            if isinstance(v, np.ndarray):
                v = v.copy()
                v.setflags(write=False)
            frozen[k] = v
        object.__setattr__(self, "params", MappingProxyType(frozen))

    def predict(self, features) -> np.ndarray:
        return predict(self, features)


def _check_finite(X: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(X)):
        raise ValueError(f"non-finite values in {what}")


def _table_xy(train: LearningTable) -> tuple[np.ndarray, np.ndarray]:
    X = train.X.to_numpy(dtype=float)
    y = np.asarray(train.y, dtype=float)
    if X.shape[0] == 0:
        raise ValueError("cannot fit on an empty table")
    _check_finite(X, "training features")
    _check_finite(y, "training target")
    return X, y


def _fit_trees(X, y, hp, seed, boosting):
    n, p = X.shape
    edges = _trees.bin_edges(X, hp["max_bins"])
    codes = _trees.apply_bins(X, edges)
    store = _trees.TreeArrays()
    rng = np.random.default_rng(seed)
    if boosting:
        init = float(y.mean())
        F = np.full(n, init)
        idx = np.arange(n)
        for m in range(hp["n_estimators"]):
            feat, thr, left, right, value, work, leaf_val = _trees.grow_tree(
                codes, y - F, idx, edges, hp["max_depth"], hp["min_samples_leaf"], p,
                int(rng.integers(2**31 - 1)), shrink=hp["learning_rate"],
            )
            F[work] += leaf_val
            store.add(feat, thr, left, right, value)
        arrays = store.freeze()
        return {"init": init, "scale": 1.0, **arrays}
    k = _trees.resolve_max_features(hp.get("max_features"), p)
    n_est = hp.get("n_estimators", 1)
    for _ in range(n_est):
        if hp.get("bootstrap", False):
            idx = rng.integers(0, n, size=n)
        else:
            idx = np.arange(n)
        feat, thr, left, right, value, _, _ = _trees.grow_tree(
            codes, y, idx, edges, hp["max_depth"], hp["min_samples_leaf"], k, int(rng.integers(2**31 - 1)),
        )
        store.add(feat, thr, left, right, value)
    arrays = store.freeze()
    return {"init": 0.0, "scale": 1.0 / n_est, **arrays}


def _fit_rem(train: LearningTable, hp):
    if train.aux is None or not {"lat", "lon"} <= set(train.aux.columns):
        raise ValueError("rem_baseline needs sample positions (lat, lon) in the table")
    lat = train.aux["lat"].to_numpy(dtype=float)
    lon = train.aux["lon"].to_numpy(dtype=float)
    y = np.asarray(train.y, dtype=float)
    _check_finite(y, "training target")
    key = _grid_keys(lat, lon, hp["resolution_deg"])
    uniq, inv = np.unique(key, return_inverse=True)
    sums = np.bincount(inv, weights=y, minlength=uniq.size)
    cnt = np.bincount(inv, minlength=uniq.size)
    return {"keys": uniq, "mean": sums / cnt, "count": cnt, "global_mean": float(y.mean())}


def fit(spec: ModelSpec, train: LearningTable) -> FittedModel:
    """Train one model on a learning table; deterministic in ``spec.seed``."""
    hp = spec.resolved
    if spec.kind == "rem_baseline":
        return FittedModel("rem_baseline", ("lat", "lon"), _fit_rem(train, hp), hp, spec.seed)
    X, y = _table_xy(train)
    if X.shape[1] < 1:
        raise ValueError("need at least one feature column")
    cols = tuple(train.X.columns)
    if spec.kind == "linear":
        A = np.column_stack([np.ones(X.shape[0]), X])
        beta, *_ = np.linalg.lstsq(A, y, rcond=None)
        params = {"intercept": float(beta[0]), "coef": beta[1:]}
    elif spec.kind in ("random_forest", "tree"):
        params = _fit_trees(X, y, hp, spec.seed, boosting=False)
    elif spec.kind == "gradient_boosting":
        params = _fit_trees(X, y, hp, spec.seed, boosting=True)
    else:
        res = _mlp.train_mlp(
            X, y, hidden=tuple(hp["hidden"]), lr=hp["learning_rate"], batch_size=hp["batch_size"],
            patience=hp["patience"], max_epochs=hp["max_epochs"], val_fraction=hp["val_fraction"], seed=spec.seed,
        )
        params = {
            "weights": res["weights"], "biases": res["biases"],
            "x_mean": res["x_mean"], "x_std": res["x_std"], "y_mean": res["y_mean"], "y_std": res["y_std"],
            "val_history": res["val_history"], "best_epoch": res["best_epoch"], "best_val": res["best_val"],
        }
    return FittedModel(spec.kind, cols, params, hp, spec.seed)


def feature_matrix(model: FittedModel, features) -> np.ndarray:
    """Validate ``features`` against the model schema and return a float matrix in schema order."""
    if isinstance(features, LearningTable):
        if model.kind == "rem_baseline":
            features = features.aux[["lat", "lon"]]
        else:
            features = features.X
    if isinstance(features, pd.DataFrame):
        have = list(features.columns)
        missing = [c for c in model.columns if c not in have]
        if missing:
            raise SchemaMismatchError(f"input lacks training column {missing[0]!r}")
        extra = [c for c in have if c not in model.columns]
        if extra:
            raise SchemaMismatchError(f"input has column {extra[0]!r} not seen in training")
        X = features[list(model.columns)].to_numpy(dtype=float)
    else:
        X = np.asarray(features, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != len(model.columns):
            raise SchemaMismatchError(f"expected {len(model.columns)} feature columns, got {X.shape[1]}")
    return X


def predict_matrix(model: FittedModel, X: np.ndarray, n_trees: int | None = None) -> np.ndarray:
    """Predict from a validated matrix in schema order (see :func:`feature_matrix`)."""
    P = model.params
    if model.kind == "linear":
        return P["intercept"] + X @ P["coef"]
    if model.kind in ("random_forest", "gradient_boosting", "tree"):
        _check_finite(X, "features")
        raw = _trees.predict_arrays(P, X, n_trees=n_trees)
        if model.kind == "gradient_boosting":
            return P["init"] + raw
        k = P["roots"].size if n_trees is None else min(n_trees, P["roots"].size)
        return raw / k
    if model.kind == "mlp":
        return _mlp.predict_mlp(P, X)
    key = _grid_keys(X[:, 0], X[:, 1], model.hyperparameters["resolution_deg"])
    pos = np.clip(np.searchsorted(P["keys"], key), 0, max(P["keys"].size - 1, 0))
    hit = P["keys"][pos] == key
    return np.where(hit, P["mean"][pos], P["global_mean"])


def predict(model: FittedModel, features) -> np.ndarray:
    return predict_matrix(model, feature_matrix(model, features))


def staged_predict(model: FittedModel, features, stages) -> list[np.ndarray]:
    """Boosting predictions after each requested number of trees."""
    if model.kind != "gradient_boosting":
        raise ValueError("staged predictions exist only for gradient boosting")
    X = feature_matrix(model, features)
    return [predict_matrix(model, X, n_trees=int(s)) for s in stages]


# --------------------------------------------------------------------------
# persistence


def _encode(v):
    if isinstance(v, np.ndarray):
        return {"__array__": v.tolist(), "dtype": str(v.dtype)}
    if isinstance(v, (list, tuple)):
        return [_encode(x) for x in v]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return v


def _decode(v):
    if isinstance(v, dict) and "__array__" in v:
        return np.asarray(v["__array__"], dtype=v["dtype"])
    if isinstance(v, list):
        return [_decode(x) for x in v]
    return v


def model_to_dict(model: FittedModel) -> dict:
    return {
        "version": FORMAT_VERSION,
        "kind": model.kind,
        "schema": list(model.columns),
        "seed": model.seed,
        "hyperparameters": _encode(dict(model.hyperparameters)),
        "parameters": {k: _encode(v) for k, v in model.params.items()},
    }


def model_from_dict(doc: dict) -> FittedModel:
    if "version" not in doc:
        raise ValueError("model document has no version field")
    if doc["version"] != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {doc['version']!r}")
    hp = _decode(doc["hyperparameters"])
    if "hidden" in hp:
        hp["hidden"] = tuple(hp["hidden"])
    return FittedModel(
        kind=doc["kind"], columns=tuple(doc["schema"]),
        params={k: _decode(v) for k, v in doc["parameters"].items()},
        hyperparameters=hp, seed=int(doc.get("seed", 0)),
    )


def save_model(model: FittedModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), sort_keys=True) + "\n", encoding="utf-8")


def load_model(path) -> FittedModel:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
