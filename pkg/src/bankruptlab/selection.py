"""Quantile binning, information value and threshold-based feature selection."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .features import FeatureMatrix, family_of


class UnbinnableError(ValueError):
    """Raised when a column has no non-missing value to bin."""


class SingleClassError(ValueError):
    """Raised when only one label class is present."""


@dataclass(frozen=True)
class BinningSpec:
    """Bins of one feature.

    ``edges`` are the interior cut points; value bin ``i`` holds
    ``edges[i-1] < x <= edges[i]``.  When ``has_missing_bin`` the last entry of
    ``good``/``bad`` counts the missing rows.  Good means label 0, bad label 1.
    """

    feature: str
    edges: np.ndarray
    has_missing_bin: bool
    good: np.ndarray
    bad: np.ndarray

    @property
    def total_good(self) -> int:
        return int(self.good.sum())

    @property
    def total_bad(self) -> int:
        return int(self.bad.sum())

    @property
    def n_bins(self) -> int:
        return len(self.good)

    @property
    def binnable(self) -> bool:
        """False when fewer than two bins survive edge collapsing."""
        return self.n_bins >= 2

    def assign(self, values) -> np.ndarray:
        """Bin index per value; missing values map to the missing bin (or -1)."""
        x = np.asarray(values, dtype=float)
        out = np.searchsorted(self.edges, x, side="left")
        miss = np.isnan(x)
        out[miss] = len(self.edges) + 1 if self.has_missing_bin else -1
        return out


def quantile_bins(values, labels, n_bins: int = 10, feature: str = "") -> BinningSpec:
    """Equal-frequency bins at empirical quantiles, plus a dedicated missing bin.

    Cut points are taken from observed values (lower quantiles), duplicate cuts
    collapse, so every value bin is non-empty and bin membership depends only
    on the ranks of the values.
    """
    x = np.asarray(values, dtype=float)
    y = np.asarray(labels)
    if x.shape != y.shape:
        raise ValueError("values and labels differ in length")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    miss = np.isnan(x)
    present = x[~miss]
    if present.size == 0:
        raise UnbinnableError(f"{feature or 'column'} is entirely missing")
    q = np.quantile(present, np.linspace(0, 1, n_bins + 1)[1:-1], method="lower")
    edges = np.unique(q)
    edges = edges[edges < present.max()]
    codes = np.searchsorted(edges, present, side="left")
    nb = len(edges) + 1
    yp = y[~miss]
    good = np.bincount(codes[yp == 0], minlength=nb)
    bad = np.bincount(codes[yp == 1], minlength=nb)
    has_missing = bool(miss.any())
    if has_missing:
        ym = y[miss]
        good = np.append(good, int((ym == 0).sum()))
        bad = np.append(bad, int((ym == 1).sum()))
    return BinningSpec(feature, edges, has_missing, good.astype(np.int64), bad.astype(np.int64))


def _shares(spec: BinningSpec, smoothing: float) -> tuple[np.ndarray, np.ndarray]:
    g = spec.good.astype(float)
    b = spec.bad.astype(float)
    if g.sum() == 0 or b.sum() == 0:
        raise SingleClassError(f"{spec.feature or 'feature'}: need both good and bad rows")
    if smoothing < 0:
        raise ValueError("smoothing must be >= 0")
    if smoothing > 0 and ((g == 0).any() or (b == 0).any()):
        g = g + smoothing
        b = b + smoothing
    return g / g.sum(), b / b.sum()


def woe(spec: BinningSpec, smoothing: float = 0.5) -> np.ndarray:
    """Weight of evidence ``ln(good share / bad share)`` per bin."""
    gs, bs = _shares(spec, smoothing)
    with np.errstate(divide="ignore"):
        return np.log(gs / bs)


def iv_contributions(spec: BinningSpec, smoothing: float = 0.5) -> np.ndarray:
    gs, bs = _shares(spec, smoothing)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = (gs - bs) * np.log(gs / bs)
    # a bin empty in both classes carries no information
    terms[(gs == 0) & (bs == 0)] = 0.0
    return terms


def information_value(spec: BinningSpec, smoothing: float = 0.5) -> float:
    """``sum_i (G_i/G - B_i/B) * ln((G_i/G) / (B_i/B))``.

    ``smoothing`` is added to every count only when some bin count is zero.
    Single-bin specs score 0.
    """
    if spec.total_good == 0 or spec.total_bad == 0:
        raise SingleClassError(f"{spec.feature or 'feature'}: need both good and bad rows")
    if not spec.binnable:
        return 0.0
    return float(iv_contributions(spec, smoothing).sum())


@dataclass(frozen=True)
class IvRow:
    feature: str
    family: str
    iv: float
    missing_rate: float
    selected: bool


@dataclass(frozen=True)
class IvReport:
    rows: tuple[IvRow, ...]
    iv_threshold: float = 0.02
    missing_threshold: float = 0.7

    def __iter__(self):
        return iter(self.rows)

    def __len__(self):
        return len(self.rows)

    def __getitem__(self, feature: str) -> IvRow:
        for r in self.rows:
            if r.feature == feature:
                return r
        raise KeyError(feature)

    @property
    def selected(self) -> list[str]:
        return [r.feature for r in self.rows if r.selected]

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["feature", "family", "iv", "missing_rate", "selected"])
        for r in self.rows:
            w.writerow([r.feature, r.family, repr(r.iv), repr(r.missing_rate), int(r.selected)])
        return buf.getvalue()

    @classmethod
    def from_csv_text(cls, text: str, iv_threshold: float = 0.02,
                      missing_threshold: float = 0.7) -> "IvReport":
        rows = []
        for rec in csv.DictReader(io.StringIO(text)):
            rows.append(IvRow(rec["feature"], rec["family"], float(rec["iv"]),
                              float(rec["missing_rate"]), rec["selected"] == "1"))
        return cls(tuple(rows), iv_threshold, missing_threshold)


def select_features(
    matrix: FeatureMatrix,
    n_bins: int = 10,
    iv_threshold: float = 0.02,
    missing_threshold: float = 0.7,
    smoothing: float = 0.5,
    columns: Optional[Sequence[str]] = None,
) -> IvReport:
    """Keep features with IV above ``iv_threshold`` and missing rate below ``missing_threshold``."""
    y = matrix.labels
    if len(y) == 0 or y.min() == y.max():
        raise SingleClassError("select_features needs both classes")
    columns = list(matrix.columns if columns is None else columns)
    pos = {c: i for i, c in enumerate(matrix.columns)}
    rows = []
    for name in columns:
        x = matrix.values[:, pos[name]]
        mrate = float(np.isnan(x).mean())
        try:
            iv = information_value(quantile_bins(x, y, n_bins, name), smoothing)
        except UnbinnableError:
            iv = 0.0
        selected = iv > iv_threshold and mrate < missing_threshold
        rows.append(IvRow(name, family_of(name), iv, mrate, selected))
    rows.sort(key=lambda r: (-r.iv, r.feature))
    return IvReport(tuple(rows), iv_threshold, missing_threshold)
