"""Model configuration, input schema handling and the fitted-model container."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Sequence, Union

import numpy as np

from ..features import FeatureMatrix, family_of

FAMILIES = ("logistic", "random_forest", "gbdt", "mlp")
FORMAT_VERSION = 1

DEFAULT_PARAMS: dict[str, dict[str, Any]] = {
    "logistic": {"l2": 1.0, "tol": 1e-8, "max_iter": 5000, "clip_quantile": 0.01},
    "random_forest": {"n_trees": 200, "max_depth": 12, "min_leaf": 5, "max_features": "sqrt",
                      "n_bins": 255, "bootstrap": True},
    "gbdt": {"n_rounds": 200, "max_leaves": 31, "learning_rate": 0.05, "n_bins": 255,
             "min_child_samples": 20, "min_child_weight": 1e-3, "reg_lambda": 0.0,
             "max_depth": -1},
    "mlp": {"hidden": [64, 32], "embed_dim": 16, "batch_size": 64, "epochs": 50,
            "learning_rate": 1e-5, "clip_quantile": 0.01},
}

DEFAULT_GRIDS: dict[str, dict[str, list]] = {
    "logistic": {"l2": [0.1, 1.0, 10.0]},
    "random_forest": {"max_depth": [6, 12], "min_leaf": [5, 20]},
    "gbdt": {"learning_rate": [0.05, 0.1], "max_leaves": [15, 31]},
    "mlp": {"learning_rate": [1e-5, 1e-3]},
}


class ConfigError(ValueError):
    """Hyperparameters outside their legal range."""


class SchemaError(ValueError):
    """Scoring input does not match the model's feature schema."""


def _check(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


def _validate(family: str, p: Mapping[str, Any]):
    if family == "logistic":
        _check(p["l2"] >= 0, "l2 must be >= 0")
        _check(p["tol"] > 0, "tol must be > 0")
        _check(int(p["max_iter"]) >= 1, "max_iter must be >= 1")
    elif family == "random_forest":
        _check(int(p["n_trees"]) >= 1, "n_trees must be >= 1")
        _check(int(p["max_depth"]) >= 1, "max_depth must be >= 1")
        _check(int(p["min_leaf"]) >= 1, "min_leaf must be >= 1")
        _check(p["max_features"] == "sqrt" or (isinstance(p["max_features"], int)
                                               and p["max_features"] >= 1),
               "max_features must be 'sqrt' or a positive int")
    elif family == "gbdt":
        _check(int(p["n_rounds"]) >= 0, "n_rounds must be >= 0")
        _check(int(p["max_leaves"]) >= 2, "max_leaves must be >= 2")
        _check(0 < p["learning_rate"] <= 1, "learning_rate must be in (0, 1]")
        _check(p["reg_lambda"] >= 0, "reg_lambda must be >= 0")
        _check(int(p["min_child_samples"]) >= 1, "min_child_samples must be >= 1")
    elif family == "mlp":
        _check(len(p["hidden"]) == 2 and min(p["hidden"]) >= 1,
               "hidden must list two positive layer widths")
        _check(int(p["embed_dim"]) >= 1, "embed_dim must be >= 1")
        _check(int(p["batch_size"]) >= 1, "batch_size must be >= 1")
        _check(int(p["epochs"]) >= 0, "epochs must be >= 0")
        _check(p["learning_rate"] > 0, "learning_rate must be > 0")
    if "n_bins" in p:
        _check(2 <= int(p["n_bins"]) <= 255, "n_bins must be in [2, 255]")
    if "clip_quantile" in p:
        _check(0 <= p["clip_quantile"] < 0.5, "clip_quantile must be in [0, 0.5)")


@dataclass(frozen=True)
class ModelConfig:
    family: str
    params: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown model family {self.family!r}; expected one of {FAMILIES}")
        unknown = set(self.params) - set(DEFAULT_PARAMS[self.family])
        if unknown:
            raise ConfigError(f"unknown {self.family} hyperparameters: {sorted(unknown)}")
        merged = {**DEFAULT_PARAMS[self.family], **dict(self.params)}
        _validate(self.family, merged)
        object.__setattr__(self, "params", merged)

    def with_params(self, **updates) -> "ModelConfig":
        return ModelConfig(self.family, {**self.params, **updates}, self.seed)

    def to_dict(self) -> dict:
        return {"family": self.family, "params": dict(self.params), "seed": self.seed}


# ---------------------------------------------------------------------------
# inputs


def as_arrays(X, y=None, feature_names: Optional[Sequence[str]] = None):
    """Normalise ``X`` into ``(values, names, families, labels)``.

    ``X`` may be a :class:`FeatureMatrix` (labels taken from it unless ``y``
    is given) or a 2-D array, in which case generic names ``x0..`` are used
    and every column is tagged ``FR``.
    """
    if isinstance(X, FeatureMatrix):
        values, names = X.values, list(X.columns)
        fams = list(X.families)
        labels = X.labels if y is None else np.asarray(y)
    else:
        values = np.asarray(X, dtype=float)
        if values.ndim != 2:
            raise ValueError("X must be two-dimensional")
        names = list(feature_names) if feature_names is not None else \
            [f"x{j}" for j in range(values.shape[1])]
        fams = []
        for n in names:
            try:
                fams.append(family_of(n))
            except ValueError:
                fams.append("FR")
        labels = None if y is None else np.asarray(y)
    if labels is not None:
        labels = np.asarray(labels).astype(np.int64).ravel()
        if len(labels) != len(values):
            raise ValueError("X and y differ in length")
    return np.asarray(values, dtype=float), names, fams, labels


def check_training_labels(y: np.ndarray, min_per_class: int = 2):
    if y is None:
        raise ValueError("labels required for fitting")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    pos = int(y.sum())
    neg = len(y) - pos
    if pos < min_per_class or neg < min_per_class:
        raise ValueError(f"need at least {min_per_class} samples per class, got {neg} negatives "
                         f"and {pos} positives")


def check_finite_inputs(values: np.ndarray):
    if np.isinf(values).any():
        raise ValueError("non-finite inputs; sanitise the feature matrix first")


def fingerprint(values: np.ndarray, labels: np.ndarray, names: Sequence[str]) -> str:
    h = hashlib.sha256()
    h.update("\x1f".join(names).encode())
    h.update(np.ascontiguousarray(values, dtype=np.float64).tobytes())
    h.update(np.ascontiguousarray(labels, dtype=np.int64).tobytes())
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class Standardizer:
    """Median imputation, quantile clipping and z-scoring with stored constants."""

    medians: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    means: np.ndarray
    scales: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray, clip_quantile: float = 0.0) -> "Standardizer":
        p = values.shape[1]
        med = np.zeros(p)
        lo = np.full(p, -np.inf)
        hi = np.full(p, np.inf)
        for j in range(p):
            col = values[:, j]
            col = col[~np.isnan(col)]
            if col.size:
                med[j] = np.median(col)
                if clip_quantile > 0:
                    lo[j], hi[j] = np.quantile(col, [clip_quantile, 1.0 - clip_quantile])
        filled = np.clip(np.where(np.isnan(values), med, values), lo, hi)
        mean = filled.mean(axis=0) if len(filled) else np.zeros(p)
        std = filled.std(axis=0) if len(filled) else np.ones(p)
        std = np.where(std > 0, std, 1.0)
        return cls(med, lo, hi, mean, std)

    def transform(self, values: np.ndarray) -> np.ndarray:
        filled = np.where(np.isnan(values), self.medians, values)
        return (np.clip(filled, self.lower, self.upper) - self.means) / self.scales

    def to_params(self) -> dict:
        return {"medians": self.medians, "lower": self.lower, "upper": self.upper,
                "means": self.means, "scales": self.scales}

    @classmethod
    def from_params(cls, d: Mapping) -> "Standardizer":
        return cls(*(np.asarray(d[k], dtype=float)
                     for k in ("medians", "lower", "upper", "means", "scales")))


# ---------------------------------------------------------------------------
# fitted model


@dataclass(frozen=True)
class TrainedModel:
    """A fitted scorer with the schema it expects at prediction time."""

    family: str
    feature_names: tuple[str, ...]
    feature_families: tuple[str, ...]
    params: Mapping[str, Any]
    config: ModelConfig
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def align(self, X, feature_names: Optional[Sequence[str]] = None) -> np.ndarray:
        """Input values re-ordered to the model schema."""
        if isinstance(X, FeatureMatrix):
            names = list(X.columns)
            values = X.values
        else:
            values = np.asarray(X, dtype=float)
            if values.ndim == 1 and values.size == 0:
                values = values.reshape(0, len(self.feature_names))
            names = list(feature_names) if feature_names is not None else list(self.feature_names)
            if values.shape[1] != len(names):
                raise SchemaError(f"expected {len(names)} columns, got {values.shape[1]}")
        missing = [c for c in self.feature_names if c not in names]
        extra = [c for c in names if c not in set(self.feature_names)]
        if missing or extra:
            raise SchemaError(f"schema mismatch: missing columns {missing}, extra columns {extra}")
        if names != list(self.feature_names):
            pos = {c: i for i, c in enumerate(names)}
            values = values[:, [pos[c] for c in self.feature_names]]
        # fixed memory layout keeps BLAS reductions, and so scores, bit-identical
        return np.ascontiguousarray(values, dtype=float)

    def predict_proba(self, X, feature_names: Optional[Sequence[str]] = None) -> np.ndarray:
        from . import predict_values
        values = self.align(X, feature_names)
        if len(values) == 0:
            return np.empty(0)
        check_finite_inputs(values)
        return predict_values(self, values)

    # -- serialisation -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "family": self.family,
            "schema": {"feature_names": list(self.feature_names),
                       "feature_families": list(self.feature_families)},
            "config": self.config.to_dict(),
            "parameters": _encode(self.params),
            "metadata": _encode(dict(self.metadata)),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1, allow_nan=True)

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainedModel":
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {d.get('format_version')!r}")
        cfg = d["config"]
        return cls(
            family=d["family"],
            feature_names=tuple(d["schema"]["feature_names"]),
            feature_families=tuple(d["schema"]["feature_families"]),
            params=_decode(d["parameters"]),
            config=ModelConfig(cfg["family"], cfg["params"], cfg["seed"]),
            metadata=_decode(d["metadata"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "TrainedModel":
        return cls.from_dict(json.loads(text))


def _encode(obj):
    if isinstance(obj, np.ndarray):
        return {"__ndarray__": obj.tolist(), "dtype": str(obj.dtype), "shape": list(obj.shape)}
    if isinstance(obj, Mapping):
        return {str(k): _encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _decode(obj):
    if isinstance(obj, dict):
        if "__ndarray__" in obj:
            arr = np.array(obj["__ndarray__"], dtype=obj["dtype"])
            return arr.reshape(obj["shape"])
        return {k: _decode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v) for v in obj]
    return obj


def save_model(model: TrainedModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(model.to_json())


def load_model(path) -> TrainedModel:
    with open(path, encoding="utf-8") as fh:
        return TrainedModel.from_json(fh.read())


Predictable = Union[FeatureMatrix, np.ndarray]
