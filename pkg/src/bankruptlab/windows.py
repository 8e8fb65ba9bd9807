"""Sliding-window sample construction, period splits and under-sampling."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from datetime import date
from typing import Iterable, Iterator, Optional, Sequence, Union

import numpy as np

from .catalog import EVENT_TYPES
from .features import (
    FR_NAMES,
    RB_NAMES,
    FeatureConfig,
    FeatureMatrix,
    FeatureVector,
    afe_block,
    behaviour_block,
    financial_ratio_block,
    months_between,
)
from .registry import LINE_ITEMS, Registry

log = logging.getLogger(__name__)

WINDOW_LENGTHS = (1, 2, 3)
TRAIN_YEARS = tuple(range(2012, 2019))
PRE_COVID_YEARS = (2019,)
POST_COVID_YEARS = (2020, 2021)


@dataclass(frozen=True)
class SampleSet:
    """Labelled samples for one window length and reference year.

    A label of 1 means the company was declared bankrupt during the calendar
    year after ``reference_year``.
    """

    window_length: int
    reference_year: int
    matrix: FeatureMatrix

    def __len__(self):
        return len(self.matrix)

    @property
    def samples(self) -> Iterator[tuple[str, FeatureVector, int]]:
        m = self.matrix
        for i in range(len(m)):
            yield m.company_ids[i], m.vector(i), int(m.labels[i])

    @property
    def positives(self) -> int:
        return int(self.matrix.labels.sum())

    @property
    def negatives(self) -> int:
        return len(self.matrix) - self.positives


def _suffix(k: int) -> str:
    return "" if k == 0 else f"_lag{k}"


def feature_columns(window_length: int, features: FeatureConfig = FeatureConfig()) -> list[str]:
    """Column names produced by :func:`build_samples`, in output order."""
    cols: list[str] = []
    if features.fr:
        for k in range(window_length):
            cols += [f"fr_{n}{_suffix(k)}" for n in FR_NAMES]
        for k in range(1, window_length):
            cols += [f"fr_{n}_chg{k}" for n in FR_NAMES]
    if features.afe:
        names = features.grammar.names()
        for k in range(window_length):
            cols += [f"{n}{_suffix(k)}" for n in names]
    if features.rb:
        cols += list(RB_NAMES)
    return cols


def eligible_companies(registry: Registry, window_length: int, reference_year: int) -> list[str]:
    """Companies with a statement for every window year and still solvent at year end."""
    first = reference_year - window_length + 1
    cutoff = date(reference_year, 12, 31)
    out = []
    for cid, comp in registry.companies.items():
        if comp.bankrupt_date is not None and comp.bankrupt_date <= cutoff:
            continue
        if all((cid, y) in registry.snapshots for y in range(first, reference_year + 1)):
            out.append(cid)
    return out


def _featurize(view: Registry, cids: Sequence[str], window_length: int,
               reference_year: int, features: FeatureConfig) -> np.ndarray:
    """Feature rows computed exclusively from the truncated ``view``."""
    n = len(cids)
    t0 = reference_year
    nan_row = np.full(len(LINE_ITEMS), np.nan)

    def items_for(year):
        rows = np.empty((n, len(LINE_ITEMS)))
        for i, cid in enumerate(cids):
            s = view.snapshots.get((cid, year))
            rows[i] = nan_row if s is None else s.as_array()
        return rows

    max_lag = window_length - 1 + max(1, features.grammar.lag_depth if features.afe else 1)
    raw = {k: items_for(t0 - k) for k in range(0, max_lag + 1)}

    blocks = []
    if features.fr:
        fr = [financial_ratio_block(raw[k], raw[k + 1]) for k in range(window_length)]
        blocks += fr
        blocks += [fr[0] - fr[k] for k in range(1, window_length)]
    if features.afe:
        g = features.grammar
        for k in range(window_length):
            hist = {j: raw[k + j] for j in range(0, g.lag_depth + 1)}
            blocks.append(afe_block(hist, g))
    if features.rb:
        first = t0 - window_length + 1
        tidx = {t: i for i, t in enumerate(EVENT_TYPES)}
        yearly = np.zeros((n, window_length, len(EVENT_TYPES)))
        months = np.full(n, np.nan)
        for i, cid in enumerate(cids):
            last = None
            for e in view.events_by_company.get(cid, ()):
                y = e.event_date.year
                if first <= y <= t0:
                    yearly[i, y - first, tidx[e.event_type]] += 1
                    last = e.event_date if last is None or e.event_date > last else last
            if last is not None:
                months[i] = months_between(last, t0)
        blocks.append(behaviour_block(yearly, months, features.trend))
    return np.hstack(blocks) if blocks else np.empty((n, 0))


def build_samples(
    registry: Registry,
    window_length: int,
    reference_year: int,
    features: FeatureConfig = FeatureConfig(),
    horizon: Optional[int] = None,
) -> SampleSet:
    """Samples for one ``(window_length, reference_year)`` cell.

    A company is included when it has a statement for each of the
    ``window_length`` fiscal years ending at ``reference_year`` and had not
    gone bankrupt by Dec 31 of that year.  Features see only records dated on
    or before that day; the label looks one calendar year ahead.
    """
    if window_length not in WINDOW_LENGTHS:
        raise ValueError(f"window_length must be one of {WINDOW_LENGTHS}")
    horizon = registry.horizon_year if horizon is None else horizon
    if horizon is None or reference_year + 1 > horizon:
        raise ValueError(
            f"reference year {reference_year}: labels need year {reference_year + 1}, "
            f"data horizon is {horizon}"
        )
    cids = eligible_companies(registry, window_length, reference_year)
    view = registry.as_of(reference_year)
    values = _featurize(view, cids, window_length, reference_year, features)
    labels = [
        int(registry.companies[c].bankrupt_date is not None
            and registry.companies[c].bankrupt_date.year == reference_year + 1)
        for c in cids
    ]
    n = len(cids)
    matrix = FeatureMatrix(
        np.asarray(cids, dtype=object), np.full(n, reference_year), np.full(n, window_length),
        feature_columns(window_length, features), values, labels,
    )
    return SampleSet(window_length, reference_year, matrix)


def build_all_samples(
    registry: Registry,
    window_length: int,
    years: Iterable[int],
    features: FeatureConfig = FeatureConfig(),
) -> list[SampleSet]:
    return [build_samples(registry, window_length, t0, features) for t0 in years]


# ---------------------------------------------------------------------------
# splits


def format_rate(positives: int, negatives: int) -> str:
    """Bankruptcy rate as a two-decimal percentage string, e.g. ``'2.31%'``."""
    total = positives + negatives
    if total == 0:
        return "n/a"
    return f"{100.0 * positives / total:.2f}%"


@dataclass(frozen=True)
class SplitBundle:
    window_length: int
    train: FeatureMatrix
    test: FeatureMatrix
    pre_covid: FeatureMatrix
    post_covid: FeatureMatrix
    seed: int
    split_fraction: float = 0.70

    SPLITS = ("train", "test", "pre_covid", "post_covid")

    def split(self, name: str) -> FeatureMatrix:
        if name not in self.SPLITS:
            raise KeyError(name)
        return getattr(self, name)

    def select(self, columns: Sequence[str]) -> "SplitBundle":
        return SplitBundle(self.window_length, *(self.split(s).select(columns) for s in self.SPLITS),
                           seed=self.seed, split_fraction=self.split_fraction)

    def manifest(self) -> dict:
        out = {
            "window_length": self.window_length,
            "seed": self.seed,
            "split_fraction": self.split_fraction,
            "splits": {},
        }
        for name in self.SPLITS:
            m = self.split(name)
            pos = int(m.labels.sum())
            neg = len(m) - pos
            out["splits"][name] = {
                "samples": len(m),
                "positives": pos,
                "negatives": neg,
                "rate": pos / len(m) if len(m) else None,
                "rate_pct": format_rate(pos, neg),
                "reference_years": sorted(set(m.reference_years.tolist())),
            }
        return out


def assemble_splits(
    samplesets: Sequence[SampleSet],
    split_fraction: float = 0.70,
    split_seed: int = 0,
    train_years: Sequence[int] = TRAIN_YEARS,
    pre_covid_years: Sequence[int] = PRE_COVID_YEARS,
    post_covid_years: Sequence[int] = POST_COVID_YEARS,
    group_by_company: bool = False,
) -> SplitBundle:
    """Train/test split of the training years plus the two out-of-time test sets.

    The train/test division is stratified by ``(reference_year, label)``:
    each stratum contributes ``round(n * split_fraction)`` rows to train.
    With ``group_by_company`` all samples of a company land on the same side
    (no stratification).
    """
    if not 0 < split_fraction < 1:
        raise ValueError("split_fraction must be in (0, 1)")
    if not samplesets:
        raise ValueError("no sample sets given")
    ws = {s.window_length for s in samplesets}
    if len(ws) != 1:
        raise ValueError(f"sample sets mix window lengths {sorted(ws)}")
    by_year = {}
    for s in samplesets:
        if s.reference_year in by_year:
            raise ValueError(f"duplicate reference year {s.reference_year}")
        by_year[s.reference_year] = s
    needed = set(train_years) | set(pre_covid_years) | set(post_covid_years)
    absent = sorted(needed - set(by_year))
    if absent:
        raise ValueError(f"missing sample sets for reference years {absent}")

    def gather(years):
        parts = [by_year[y].matrix for y in sorted(years)]
        return FeatureMatrix.concat(parts)

    pool = gather(train_years)
    rng = np.random.default_rng(split_seed)
    if group_by_company:
        companies = np.array(sorted(set(pool.company_ids.tolist())), dtype=object)
        perm = rng.permutation(len(companies))
        n_train = int(np.floor(len(companies) * split_fraction + 0.5))
        train_cos = set(companies[perm[:n_train]].tolist())
        in_train = np.array([c in train_cos for c in pool.company_ids], dtype=bool)
    else:
        in_train = np.zeros(len(pool), dtype=bool)
        strata = sorted(set(zip(pool.reference_years.tolist(), pool.labels.tolist())))
        for year, label in strata:
            idx = np.flatnonzero((pool.reference_years == year) & (pool.labels == label))
            n_train = int(np.floor(len(idx) * split_fraction + 0.5))
            in_train[idx[rng.permutation(len(idx))[:n_train]]] = True
    return SplitBundle(
        window_length=ws.pop(),
        train=pool.take(np.flatnonzero(in_train)),
        test=pool.take(np.flatnonzero(~in_train)),
        pre_covid=gather(pre_covid_years),
        post_covid=gather(post_covid_years),
        seed=split_seed,
        split_fraction=split_fraction,
    )


MatrixOrSet = Union[FeatureMatrix, SampleSet]


def undersample(train: MatrixOrSet, target_rate: float = 0.25, seed: int = 0) -> MatrixOrSet:
    """Drop negatives at random until positives make up ``target_rate`` of the rows.

    All positives are kept; ``round(P * (1 - r) / r)`` negatives survive.
    Input whose positive rate already reaches the target is returned as is.
    """
    m = train.matrix if isinstance(train, SampleSet) else train
    if not 0 < target_rate < 1:
        raise ValueError("target_rate must be in (0, 1)")
    pos_idx = np.flatnonzero(m.labels == 1)
    neg_idx = np.flatnonzero(m.labels == 0)
    if len(pos_idx) == 0:
        raise ValueError("undersample needs at least one positive sample")
    current = len(pos_idx) / len(m)
    if target_rate <= current:
        log.warning("positive rate %.4f already >= target %.4f; not under-sampling",
                    current, target_rate)
        return train
    keep_neg = int(round(len(pos_idx) * (1.0 - target_rate) / target_rate))
    keep_neg = min(keep_neg, len(neg_idx))
    rng = np.random.default_rng(seed)
    kept = rng.choice(neg_idx, size=keep_neg, replace=False)
    rows = np.sort(np.concatenate([pos_idx, kept]))
    out = m.take(rows)
    if isinstance(train, SampleSet):
        return SampleSet(train.window_length, train.reference_year, out)
    return out
