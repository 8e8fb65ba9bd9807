"""Model families behind one fit/score contract."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .base import (DEFAULT_GRIDS, DEFAULT_PARAMS, FAMILIES, ConfigError, ModelConfig,
                   SchemaError, TrainedModel, as_arrays, check_finite_inputs,
                   check_training_labels, fingerprint, load_model, save_model)
from .forest import fit_forest_params, predict_forest
from .gbdt import fit_gbdt_params, predict_gbdt
from .logistic import fit_logistic_params, predict_logistic
from .mlp import fit_mlp_params, predict_mlp
from .search import DegenerateFoldError, grid_search_cv, stratified_folds


def _fit(cfg: ModelConfig, X, y, feature_names):
    values, names, fams, labels = as_arrays(X, y, feature_names)
    check_training_labels(labels)
    check_finite_inputs(values)
    p = cfg.params
    if cfg.family == "logistic":
        params = fit_logistic_params(values, labels, p)
    elif cfg.family == "random_forest":
        params = fit_forest_params(values, labels, p, cfg.seed)
    elif cfg.family == "gbdt":
        params = fit_gbdt_params(values, labels, p, cfg.seed)
    else:
        params = fit_mlp_params(values, labels, fams, p, cfg.seed)
    meta = {"seed": cfg.seed, "n_samples": len(labels), "n_positives": int(labels.sum()),
            "data_fingerprint": fingerprint(values, labels, names)}
    return TrainedModel(cfg.family, tuple(names), tuple(fams), params, cfg, meta)


def fit_model(cfg: ModelConfig, X, y=None, feature_names: Optional[Sequence[str]] = None
              ) -> TrainedModel:
    return _fit(cfg, X, y, feature_names)


def _family_fit(family):
    def fit(X, y=None, cfg: Optional[ModelConfig] = None, seed: Optional[int] = None,
            feature_names: Optional[Sequence[str]] = None) -> TrainedModel:
        if cfg is None:
            cfg = ModelConfig(family, {}, 0 if seed is None else seed)
        elif cfg.family != family:
            raise ConfigError(f"config is for {cfg.family}, not {family}")
        elif seed is not None:
            cfg = ModelConfig(family, cfg.params, seed)
        return _fit(cfg, X, y, feature_names)
    fit.__name__ = f"fit_{family}"
    fit.__doc__ = f"Fit a {family} model; ``cfg`` defaults to the family defaults."
    return fit


fit_logistic = _family_fit("logistic")
fit_random_forest = _family_fit("random_forest")
fit_gbdt = _family_fit("gbdt")
fit_mlp = _family_fit("mlp")


def predict_values(model: TrainedModel, values: np.ndarray) -> np.ndarray:
    """Scores for a value array already aligned to the model schema."""
    fn = {"logistic": predict_logistic, "random_forest": predict_forest,
          "gbdt": predict_gbdt, "mlp": predict_mlp}[model.family]
    return np.clip(fn(model.params, values), 0.0, 1.0)


def predict_proba(model: TrainedModel, X, feature_names: Optional[Sequence[str]] = None
                  ) -> np.ndarray:
    return model.predict_proba(X, feature_names)


__all__ = [
    "FAMILIES", "DEFAULT_PARAMS", "DEFAULT_GRIDS", "ConfigError", "SchemaError",
    "DegenerateFoldError", "ModelConfig", "TrainedModel", "fit_model", "fit_logistic",
    "fit_random_forest", "fit_gbdt", "fit_mlp", "predict_proba", "predict_values",
    "grid_search_cv", "stratified_folds", "save_model", "load_model",
]
