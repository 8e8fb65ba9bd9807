"""Ranking metrics, the feature-set ablation matrix and the pandemic drift comparison."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .models import DEFAULT_GRIDS, TrainedModel, fit_model, grid_search_cv
from .windows import SplitBundle, undersample

log = logging.getLogger(__name__)

EVAL_SPLITS = ("test", "pre_covid", "post_covid")
FEATURE_SETS: dict[str, tuple[str, ...]] = {
    "FR": ("FR",),
    "AFE": ("AFE",),
    "FR+RB": ("FR", "RB"),
    "AFE+RB": ("AFE", "RB"),
}
# hybrid set -> the single-source set it extends
HYBRID_PAIRS = {"FR+RB": "FR", "AFE+RB": "AFE"}


class SingleClassError(ValueError):
    """ROC/AUC need both classes."""


def _pair(scores, labels):
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels).astype(np.int64).ravel()
    if len(s) != len(y):
        raise ValueError(f"scores and labels differ in length ({len(s)} vs {len(y)})")
    return s, y


# ---------------------------------------------------------------------------
# confusion counts


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def tpr(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else float("nan")

    @property
    def fpr(self) -> float:
        d = self.fp + self.tn
        return self.fp / d if d else float("nan")


def confusion(scores, labels, threshold: float) -> ConfusionCounts:
    """Counts with the rule: predicted positive when ``score >= threshold``."""
    s, y = _pair(scores, labels)
    pred = s >= threshold
    pos = y == 1
    return ConfusionCounts(tp=int(np.sum(pred & pos)), fp=int(np.sum(pred & ~pos)),
                           tn=int(np.sum(~pred & ~pos)), fn=int(np.sum(~pred & pos)))


# ---------------------------------------------------------------------------
# ROC / AUC


@dataclass(frozen=True)
class RocCurve:
    """Vertices from threshold ``+inf`` down to the lowest score.

    ``thresholds[i]`` is the cut producing vertex ``i``; tied scores share a
    single vertex.
    """

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray

    def __len__(self):
        return len(self.fpr)

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def area(self) -> float:
        return float(np.sum(np.diff(self.fpr) * (self.tpr[1:] + self.tpr[:-1]) / 2.0))

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("fpr", "tpr", "threshold"))
        for f, t, th in zip(self.fpr.tolist(), self.tpr.tolist(), self.thresholds.tolist()):
            w.writerow((repr(f), repr(t), repr(th)))
        return buf.getvalue()

    @classmethod
    def from_csv_text(cls, text: str) -> "RocCurve":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["fpr", "tpr", "threshold"]:
            raise ValueError("not a ROC CSV (expected header fpr,tpr,threshold)")
        arr = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, 3)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2])


def roc_curve(scores, labels) -> RocCurve:
    s, y = _pair(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("ROC needs both positive and negative samples")
    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order]
    # last index of each block of tied scores
    ends = np.r_[np.flatnonzero(np.diff(s_sorted) != 0), len(s_sorted) - 1]
    tp = np.cumsum(y_sorted)[ends]
    fp = (ends + 1) - tp
    fpr = np.r_[0.0, fp / n_neg]
    tpr = np.r_[0.0, tp / n_pos]
    thresholds = np.r_[np.inf, s_sorted[ends]]
    return RocCurve(fpr, tpr, thresholds)


def auc(scores, labels) -> float:
    """Trapezoidal area under :func:`roc_curve`; ties count one half."""
    return roc_curve(scores, labels).area()


# ---------------------------------------------------------------------------
# ablation


@dataclass(frozen=True)
class CellResult:
    family: str
    feature_set: str
    window_length: int
    split: str
    seed: int
    auc: float
    samples: int
    positives: int
    roc: Optional[RocCurve] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class AblationReport:
    results: tuple[CellResult, ...]
    configs: Mapping[tuple[str, str, int, int], dict] = field(default_factory=dict)

    def __len__(self):
        return len(self.results)

    @property
    def families(self) -> list[str]:
        return list(dict.fromkeys(r.family for r in self.results))

    @property
    def feature_sets(self) -> list[str]:
        return list(dict.fromkeys(r.feature_set for r in self.results))

    @property
    def windows(self) -> list[int]:
        return sorted({r.window_length for r in self.results})

    @property
    def splits(self) -> list[str]:
        return [s for s in EVAL_SPLITS if any(r.split == s for r in self.results)]

    def auc(self, family: str, feature_set: str, window_length: int, split: str) -> float:
        """AUC averaged over seeds."""
        vals = [r.auc for r in self.results if (r.family, r.feature_set, r.window_length,
                                                r.split) == (family, feature_set, window_length,
                                                             split)]
        if not vals:
            raise KeyError((family, feature_set, window_length, split))
        return float(np.mean(vals))

    def roc(self, family, feature_set, window_length, split) -> Optional[RocCurve]:
        """ROC of the first seed evaluated for the cell."""
        for r in self.results:
            if (r.family, r.feature_set, r.window_length, r.split) == \
                    (family, feature_set, window_length, split):
                return r.roc
        return None

    def cells(self) -> list[tuple[str, str, int]]:
        return list(dict.fromkeys((r.family, r.feature_set, r.window_length)
                                  for r in self.results))

    def deltas(self) -> list[dict]:
        """Hybrid minus single-source AUC, absolute and as a percentage of the single AUC."""
        out = []
        have = set(self.feature_sets)
        for fam in self.families:
            for hybrid, single in HYBRID_PAIRS.items():
                if hybrid not in have or single not in have:
                    continue
                for w in self.windows:
                    for split in self.splits:
                        try:
                            a_h = self.auc(fam, hybrid, w, split)
                            a_s = self.auc(fam, single, w, split)
                        except KeyError:
                            continue
                        out.append({"family": fam, "hybrid": hybrid, "single": single,
                                    "window_length": w, "split": split,
                                    "delta": a_h - a_s,
                                    "delta_pct": 100.0 * (a_h - a_s) / a_s if a_s else None})
        return out

    def matrix_rows(self) -> list[dict]:
        rows = []
        for fam, fs, w in self.cells():
            row = {"family": fam, "feature_set": fs, "window_length": w}
            for split in EVAL_SPLITS:
                try:
                    row[split] = self.auc(fam, fs, w, split)
                except KeyError:
                    row[split] = None
            rows.append(row)
        return rows

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("family", "feature_set", "window_length") + EVAL_SPLITS)
        for r in self.matrix_rows():
            w.writerow([r["family"], r["feature_set"], r["window_length"]]
                       + ["" if r[s] is None else f"{r[s]:.6f}" for s in EVAL_SPLITS])
        return buf.getvalue()

    def to_json_text(self) -> str:
        doc = {
            "auc_matrix": self.matrix_rows(),
            "deltas": self.deltas(),
            "cells": [{"family": r.family, "feature_set": r.feature_set,
                       "window_length": r.window_length, "split": r.split, "seed": r.seed,
                       "auc": r.auc, "samples": r.samples, "positives": r.positives}
                      for r in self.results],
            "configs": [{"family": k[0], "feature_set": k[1], "window_length": k[2],
                         "seed": k[3], "params": v} for k, v in self.configs.items()],
        }
        return json.dumps(doc, indent=1, sort_keys=True)


def feature_set_columns(columns: Sequence[str], families: Sequence[str],
                        feature_set: str) -> list[str]:
    wanted = FEATURE_SETS[feature_set]
    return [c for c, f in zip(columns, families) if f in wanted]


def _check_keys(reference: SplitBundle, other: SplitBundle, label: str):
    for split in SplitBundle.SPLITS:
        if reference.split(split).keys != other.split(split).keys:
            raise ValueError(f"sample keys of feature set {label} differ from the reference on "
                             f"split {split}; the ablation would compare different samples")


BundleInput = Union[SplitBundle, Mapping[str, SplitBundle]]


def prepare_feature_sets(bundles: Mapping[int, BundleInput],
                         feature_sets: Sequence[str] = tuple(FEATURE_SETS)
                         ) -> dict[int, dict[str, SplitBundle]]:
    """Per window, one bundle per feature set, with the ablation preconditions checked.

    ``bundles`` maps a window length to either one bundle holding all
    columns (feature sets are carved out by family tag) or a mapping from
    feature set to its own bundle.  All feature sets of a window must share
    their sample keys, and each hybrid set must contain every column of the
    single-source set it extends.
    """
    for fs in feature_sets:
        if fs not in FEATURE_SETS:
            raise ValueError(f"unknown feature set {fs!r}; expected one of {tuple(FEATURE_SETS)}")
    out = {}
    for w in sorted(bundles):
        entry = bundles[w]
        per_set = {}
        for fs in feature_sets:
            if isinstance(entry, SplitBundle):
                tr = entry.train
                per_set[fs] = entry.select(feature_set_columns(tr.columns, tr.families, fs))
            else:
                if fs not in entry:
                    raise ValueError(f"window {w}: no bundle for feature set {fs}")
                per_set[fs] = entry[fs]
        ref = per_set[feature_sets[0]]
        for fs, b in per_set.items():
            _check_keys(ref, b, fs)
            if not b.train.columns:
                raise ValueError(f"window {w}: feature set {fs} has no columns")
        for hybrid, single in HYBRID_PAIRS.items():
            if hybrid in per_set and single in per_set:
                missing = set(per_set[single].train.columns) - set(per_set[hybrid].train.columns)
                if missing:
                    raise ValueError(f"window {w}: {hybrid} lacks {single} columns "
                                     f"{sorted(missing)[:5]}")
        out[w] = per_set
    return out


CellKey = tuple  # (family, feature_set, window_length, seed)


def fit_cells(
    per_window: Mapping[int, Mapping[str, SplitBundle]],
    families: Sequence[str] = ("logistic", "gbdt"),
    seeds: Sequence[int] = (0,),
    grids: Optional[Mapping[str, Mapping[str, Sequence]]] = None,
    base_params: Optional[Mapping[str, Mapping]] = None,
    target_rate: Optional[float] = 0.25,
    folds: int = 5,
) -> dict[CellKey, TrainedModel]:
    """Under-sample, grid-search and refit each (family, feature set, window, seed) cell."""
    grids = DEFAULT_GRIDS if grids is None else grids
    base_params = base_params or {}
    models = {}
    for w in sorted(per_window):
        for fam in families:
            for fs, b in per_window[w].items():
                for seed in seeds:
                    train = undersample(b.train, target_rate, seed) if target_rate else b.train
                    cfg, _ = grid_search_cv(fam, grids.get(fam, {}), train, folds=folds,
                                            seed=seed, base_params=base_params.get(fam))
                    models[(fam, fs, w, seed)] = fit_model(cfg, train)
                    log.info("train: %s %s W=%d seed=%d fitted", fam, fs, w, seed)
    return models


def score_cells(models: Mapping[CellKey, TrainedModel],
                per_window: Mapping[int, Mapping[str, SplitBundle]]) -> AblationReport:
    """AUC and ROC of every fitted cell on the three evaluation splits."""
    results, configs = [], {}
    for key, model in models.items():
        fam, fs, w, seed = key
        b = per_window[w][fs]
        configs[key] = dict(model.config.params)
        for split in EVAL_SPLITS:
            m = b.split(split)
            if len(m) == 0 or m.labels.min() == m.labels.max():
                log.warning("evaluate: %s W=%d split %s lacks a class; skipped", fs, w, split)
                continue
            roc = roc_curve(model.predict_proba(m), m.labels)
            results.append(CellResult(fam, fs, w, split, seed, roc.area(), len(m),
                                      int(m.labels.sum()), roc))
    return AblationReport(tuple(results), configs)


def ablation_matrix(
    bundles: Mapping[int, BundleInput],
    families: Sequence[str] = ("logistic", "gbdt"),
    feature_sets: Sequence[str] = tuple(FEATURE_SETS),
    seeds: Sequence[int] = (0,),
    grids: Optional[Mapping[str, Mapping[str, Sequence]]] = None,
    base_params: Optional[Mapping[str, Mapping]] = None,
    target_rate: Optional[float] = 0.25,
    folds: int = 5,
) -> AblationReport:
    """Fit and score every (family, feature set, window, seed) cell.

    Each cell under-samples the training split, picks hyperparameters by
    grid search on it, refits and scores the test and pandemic splits.
    """
    per_window = prepare_feature_sets(bundles, feature_sets)
    models = fit_cells(per_window, families, seeds, grids, base_params, target_rate, folds)
    return score_cells(models, per_window)


# ---------------------------------------------------------------------------
# drift


@dataclass(frozen=True)
class DriftRow:
    family: str
    feature_set: str
    window_length: int
    auc_test: float
    delta_pre: Optional[float]
    delta_post: Optional[float]
    # hybrid rows only: compared with the single-source set they extend
    degrades_alone: Optional[bool] = None
    larger_post_drop: Optional[bool] = None


@dataclass(frozen=True)
class DriftReport:
    rows: tuple[DriftRow, ...]

    def __len__(self):
        return len(self.rows)

    def get(self, family, feature_set, window_length) -> DriftRow:
        for r in self.rows:
            if (r.family, r.feature_set, r.window_length) == (family, feature_set, window_length):
                return r
        raise KeyError((family, feature_set, window_length))

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("family", "feature_set", "window_length", "auc_test", "delta_pre",
                    "delta_post", "degrades_alone", "larger_post_drop"))
        fmt = lambda v: "" if v is None else (str(v).lower() if isinstance(v, bool)
                                              else f"{v:.6f}")
        for r in self.rows:
            w.writerow([r.family, r.feature_set, r.window_length, fmt(r.auc_test),
                        fmt(r.delta_pre), fmt(r.delta_post), fmt(r.degrades_alone),
                        fmt(r.larger_post_drop)])
        return buf.getvalue()


def drift_report(ablation: AblationReport) -> DriftReport:
    """AUC change of each cell on the pre/post pandemic splits relative to test.

    For hybrid sets, ``degrades_alone`` marks a post-pandemic drop while the
    matching single-source set holds up, and ``larger_post_drop`` marks a
    post-pandemic drop strictly larger than the single-source one.
    """
    def safe(fam, fs, w, split):
        try:
            return ablation.auc(fam, fs, w, split)
        except KeyError:
            return None

    base = {}
    for fam, fs, w in ablation.cells():
        t = safe(fam, fs, w, "test")
        pre, post = safe(fam, fs, w, "pre_covid"), safe(fam, fs, w, "post_covid")
        base[(fam, fs, w)] = (t, None if pre is None or t is None else pre - t,
                              None if post is None or t is None else post - t)
    rows = []
    for (fam, fs, w), (t, dpre, dpost) in base.items():
        alone = larger = None
        single = HYBRID_PAIRS.get(fs)
        if single and (fam, single, w) in base and dpost is not None:
            s_post = base[(fam, single, w)][2]
            if s_post is not None:
                alone = bool(dpost < 0 <= s_post)
                larger = bool(dpost < s_post)
        rows.append(DriftRow(fam, fs, w, t, dpre, dpost, alone, larger))
    return DriftReport(tuple(rows))


# ---------------------------------------------------------------------------
# export


def roc_file_name(family: str, feature_set: str, window_length: int, split: str) -> str:
    return f"roc_{family}_{feature_set}_{window_length}y_{split}.csv"


def emit_roc_csv(report: AblationReport, destination) -> list[Path]:
    """One ``fpr,tpr,threshold`` file per (family, feature set, window, split)."""
    dest = Path(destination)
    dest.mkdir(parents=True, exist_ok=True)
    paths = []
    for fam, fs, w in report.cells():
        for split in EVAL_SPLITS:
            roc = report.roc(fam, fs, w, split)
            if roc is None:
                continue
            path = dest / roc_file_name(fam, fs, w, split)
            path.write_text(roc.to_csv_text(), encoding="utf-8")
            paths.append(path)
    return paths
