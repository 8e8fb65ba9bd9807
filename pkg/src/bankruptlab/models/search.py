"""Grid search with stratified k-fold cross-validation."""

from __future__ import annotations

import itertools
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from .base import ModelConfig, as_arrays


class DegenerateFoldError(ValueError):
    """A fold would lack one of the classes."""


def stratified_folds(y: np.ndarray, k: int = 5, seed: int = 0) -> np.ndarray:
    """Fold index per row; each class is shuffled and dealt round-robin."""
    y = np.asarray(y)
    if k < 2:
        raise ValueError("need at least 2 folds")
    counts = np.bincount(y.astype(np.int64), minlength=2)
    if counts.min() < k:
        raise DegenerateFoldError(
            f"cannot build {k} stratified folds with {counts[0]} negatives and {counts[1]} positives")
    rng = np.random.default_rng(seed)
    fold = np.empty(len(y), dtype=np.int64)
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        fold[idx] = np.arange(len(idx)) % k
    return fold


def grid_cells(grid: Mapping[str, Sequence[Any]]) -> list[dict]:
    """Cartesian product in lexicographic order of sorted names and listed values."""
    if not grid:
        return [{}]
    names = sorted(grid)
    for n in names:
        if len(grid[n]) == 0:
            raise ValueError(f"grid axis {n!r} is empty")
    return [dict(zip(names, combo)) for combo in itertools.product(*(grid[n] for n in names))]


def grid_search_cv(family: str, grid: Mapping[str, Sequence[Any]], X, y=None, folds: int = 5,
                   seed: int = 0, base_params: Optional[Mapping[str, Any]] = None,
                   feature_names: Optional[Sequence[str]] = None):
    """Best config by mean validation AUC and the per-cell scores.

    Cells are visited in the order of :func:`grid_cells`; a later cell must
    beat the incumbent strictly, so ties resolve to the lexicographically
    first cell.  A single-cell grid is returned without fitting.
    """
    from . import fit_model
    from ..evaluation import auc

    values, names, fams, labels = as_arrays(X, y, feature_names)
    base = dict(base_params or {})
    cells = grid_cells(grid)
    if len(cells) == 1:
        return ModelConfig(family, {**base, **cells[0]}, seed), [(cells[0], float("nan"))]
    fold = stratified_folds(labels, folds, seed)
    scores = []
    best, best_score = None, -np.inf
    for cell in cells:
        cfg = ModelConfig(family, {**base, **cell}, seed)
        fold_auc = []
        for f in range(folds):
            tr, va = fold != f, fold == f
            model = fit_model(cfg, values[tr], labels[tr], feature_names=names)
            fold_auc.append(auc(model.predict_proba(values[va], names), labels[va]))
        mean = float(np.mean(fold_auc))
        scores.append((cell, mean))
        if mean > best_score:
            best, best_score = cfg, mean
    return best, scores
