"""Feature binning and array-backed binary trees shared by the forest and GBDT."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

MISSING_BIN = 255
HIST_WIDTH = 256


def _edges_for(column: np.ndarray, max_bins: int) -> np.ndarray:
    present = column[~np.isnan(column)]
    if present.size == 0:
        return np.empty(0)
    distinct, counts = np.unique(present, return_counts=True)
    if len(distinct) <= max_bins:
        return (distinct[:-1] + distinct[1:]) / 2.0
    # cut between distinct values at rank quantiles, so membership depends on order only
    cum = np.cumsum(counts)
    targets = present.size * np.arange(1, max_bins) / max_bins
    pos = np.unique(np.searchsorted(cum, targets, side="left"))
    pos = pos[pos < len(distinct) - 1]
    return (distinct[pos] + distinct[pos + 1]) / 2.0


@dataclass(frozen=True)
class Binner:
    """Per-feature bin edges; value ``x`` lands in bin ``i`` when ``edges[i-1] < x <= edges[i]``."""

    edges: tuple[np.ndarray, ...]

    @classmethod
    def fit(cls, values: np.ndarray, max_bins: int = 255) -> "Binner":
        if not 2 <= max_bins <= 255:
            raise ValueError("max_bins must be in [2, 255]")
        return cls(tuple(_edges_for(values[:, j], max_bins) for j in range(values.shape[1])))

    def transform(self, values: np.ndarray) -> np.ndarray:
        n, p = values.shape
        codes = np.empty((n, p), dtype=np.uint8)
        for j in range(p):
            col = values[:, j]
            c = np.searchsorted(self.edges[j], col, side="left")
            c[np.isnan(col)] = MISSING_BIN
            codes[:, j] = c
        return codes

    def to_params(self) -> list:
        return [e for e in self.edges]

    @classmethod
    def from_params(cls, edges: Sequence) -> "Binner":
        return cls(tuple(np.asarray(e, dtype=float) for e in edges))


class TreeBuilder:
    """Growable node store; finalised with :meth:`to_params`."""

    def __init__(self):
        self.feature: list[int] = []
        self.threshold: list[int] = []
        self.missing_left: list[bool] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []

    def add_leaf(self, value: float) -> int:
        self.feature.append(-1)
        self.threshold.append(0)
        self.missing_left.append(False)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(float(value))
        return len(self.feature) - 1

    def split(self, node: int, feature: int, threshold: int, missing_left: bool,
              left_value: float, right_value: float) -> tuple[int, int]:
        left = self.add_leaf(left_value)
        right = self.add_leaf(right_value)
        self.feature[node] = feature
        self.threshold[node] = threshold
        self.missing_left[node] = missing_left
        self.left[node] = left
        self.right[node] = right
        return left, right

    def to_params(self) -> dict:
        return {
            "feature": np.asarray(self.feature, dtype=np.int64),
            "threshold": np.asarray(self.threshold, dtype=np.int64),
            "missing_left": np.asarray(self.missing_left, dtype=bool),
            "left": np.asarray(self.left, dtype=np.int64),
            "right": np.asarray(self.right, dtype=np.int64),
            "value": np.asarray(self.value, dtype=float),
        }


def goes_left(codes: np.ndarray, threshold: int, missing_left: bool) -> np.ndarray:
    missing = codes == MISSING_BIN
    return np.where(missing, missing_left, codes <= threshold)


def apply_tree(tree: dict, codes: np.ndarray) -> np.ndarray:
    """Leaf index reached by each row of ``codes``."""
    feature, threshold = tree["feature"], tree["threshold"]
    mleft, left, right = tree["missing_left"], tree["left"], tree["right"]
    node = np.zeros(len(codes), dtype=np.int64)
    rows = np.arange(len(codes))
    active = feature[node] >= 0
    while active.any():
        r = rows[active]
        nd = node[r]
        c = codes[r, feature[nd]]
        go = np.where(c == MISSING_BIN, mleft[nd], c <= threshold[nd])
        node[r] = np.where(go, left[nd], right[nd])
        active = feature[node] >= 0
    return node


def node_histograms(codes: np.ndarray, rows: np.ndarray, features: np.ndarray,
                    weights: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Per-(feature, bin) sums of each weight vector over ``rows``.

    Returns one ``(len(features), HIST_WIDTH)`` array per weight vector, plus
    the row counts as the last element.
    """
    sub = codes[np.ix_(rows, features)].astype(np.int64)
    flat = (sub + np.arange(len(features)) * HIST_WIDTH).ravel()
    size = len(features) * HIST_WIDTH
    out = []
    for w in weights:
        ww = np.repeat(w[rows], len(features))
        out.append(np.bincount(flat, weights=ww, minlength=size).reshape(len(features), HIST_WIDTH))
    out.append(np.bincount(flat, minlength=size).reshape(len(features), HIST_WIDTH).astype(float))
    return out


def split_sides(stat: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Left sums for every threshold and missing direction.

    ``stat`` is a ``(p, HIST_WIDTH)`` histogram.  Returns ``(left, right, total)``
    where ``left``/``right`` have shape ``(p, MISSING_BIN, 2)``: threshold ``t``
    sends bins ``<= t`` left; direction 0 sends the missing bin right,
    direction 1 sends it left.
    """
    real = stat[:, :MISSING_BIN]
    miss = stat[:, MISSING_BIN]
    total = real.sum(axis=1) + miss
    cum = np.cumsum(real, axis=1)
    left = np.stack([cum, cum + miss[:, None]], axis=2)
    right = total[:, None, None] - left
    return left, right, total
