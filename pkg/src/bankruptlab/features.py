"""Financial ratios, automatic accounting features and reported-behaviour features.

Three feature families are produced, tagged by column-name prefix:

* ``fr_``  financial ratios computed from one balance sheet (plus its predecessor),
* ``afe_`` combinatorial accounting features enumerated from an :class:`AfeGrammar`,
* ``rb_``  counts and trends of restructuring filings inside a time window.

Inside this module missing values are carried as NaN in float arrays; the
public :class:`FeatureVector` converts them to ``None``.  Division by zero
yields a signed infinity (``0/0`` is missing) and is cleaned up later by
:func:`sanitize_matrix`.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from datetime import date
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from .catalog import EVENT_TYPES
from .registry import LINE_ITEMS, BalanceSheetSnapshot, FilingEvent

FAMILIES = ("FR", "AFE", "RB")
_PREFIX = {"fr_": "FR", "afe_": "AFE", "rb_": "RB"}

KEY_COLUMNS = ("company_id", "reference_year", "window_length", "label")


def family_of(name: str) -> str:
    for prefix, fam in _PREFIX.items():
        if name.startswith(prefix):
            return fam
    raise ValueError(f"cannot infer feature family of column {name!r}")


def _div(a, b):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.asarray(a, dtype=float) / np.asarray(b, dtype=float)


# ---------------------------------------------------------------------------
# financial ratios

FR_NAMES: tuple[str, ...] = (
    "current_ratio",
    "debt_to_equity",
    "working_capital_to_total_assets",
    "total_liabilities_to_total_assets",
    "equity_to_total_assets",
    "quick_ratio",
    "current_assets_to_total_assets",
    "cash_to_total_assets",
    "cash_to_current_liabilities",
    "long_term_debt_to_equity",
    "total_assets_growth_rate",
    "quick_assets_to_total_assets",
    "current_assets_to_current_liabilities",
    "cash_or_marketable_securities_to_total_assets",
    "total_debt_to_total_assets",
    "equity_to_fixed_assets",
    "current_assets_to_total_liabilities",
    "short_term_liabilities_to_total_assets",
)

_ITEM_INDEX = {name: i for i, name in enumerate(LINE_ITEMS)}


def financial_ratio_block(items: np.ndarray, prior: Optional[np.ndarray] = None) -> np.ndarray:
    """Vectorised ratios.

    ``items`` and ``prior`` have shape ``(n, len(LINE_ITEMS))`` with NaN for
    missing line items; a missing prior row is all-NaN.  Returns ``(n, 18)``
    columns in ``FR_NAMES`` order.
    """
    items = np.atleast_2d(np.asarray(items, dtype=float))
    if prior is None:
        prior = np.full_like(items, np.nan)
    prior = np.atleast_2d(np.asarray(prior, dtype=float))

    def col(name, src=items):
        return src[:, _ITEM_INDEX[name]]

    ta, ca, qa = col("total_assets"), col("current_assets"), col("quick_assets")
    cash, ms, fa = col("cash"), col("marketable_securities"), col("fixed_assets")
    tl, cl, ltd, eq = (col("total_liabilities"), col("current_liabilities"),
                       col("long_term_debt"), col("equity"))
    ta_prev = col("total_assets", prior)

    out = {
        "current_ratio": _div(ca, cl),
        "debt_to_equity": _div(tl, eq),
        "working_capital_to_total_assets": _div(ca - cl, ta),
        "total_liabilities_to_total_assets": _div(tl, ta),
        "equity_to_total_assets": _div(eq, ta),
        "quick_ratio": _div(qa, cl),
        "current_assets_to_total_assets": _div(ca, ta),
        "cash_to_total_assets": _div(cash, ta),
        "cash_to_current_liabilities": _div(cash, cl),
        "long_term_debt_to_equity": _div(ltd, eq),
        "total_assets_growth_rate": _div(ta - ta_prev, ta_prev),
        "quick_assets_to_total_assets": _div(qa, ta),
        "current_assets_to_current_liabilities": _div(ca, cl),
        "cash_or_marketable_securities_to_total_assets": _div(cash + ms, ta),
        "total_debt_to_total_assets": _div(cl + ltd, ta),
        "equity_to_fixed_assets": _div(eq, fa),
        "current_assets_to_total_liabilities": _div(ca, tl),
        "short_term_liabilities_to_total_assets": _div(cl, ta),
    }
    return np.column_stack([out[n] for n in FR_NAMES])


# ---------------------------------------------------------------------------
# automatic accounting features

AFE_ITEMS: tuple[str, ...] = LINE_ITEMS + ("working_capital", "total_debt")


def extended_items(items: np.ndarray) -> np.ndarray:
    """Append the derived items ``working_capital`` and ``total_debt``."""
    items = np.atleast_2d(np.asarray(items, dtype=float))
    wc = items[:, _ITEM_INDEX["current_assets"]] - items[:, _ITEM_INDEX["current_liabilities"]]
    td = items[:, _ITEM_INDEX["current_liabilities"]] + items[:, _ITEM_INDEX["long_term_debt"]]
    return np.column_stack([items, wc, td])


UNARY_FORMS = ("identity", "log1p")
BINARY_FORMS = ("div", "sub", "subdiv")


@dataclass(frozen=True)
class AfeGrammar:
    """Recipe space for automatically generated accounting features.

    Enumeration order, truncated at ``max_features``:

    1. year-over-year growth ``(x_t - x_{t-k}) / |x_{t-k}|`` for k = 1..lag_depth;
    2. unary transforms per item (``identity``, ``log1p`` of non-negative values);
    3. ``div``: ``a / b`` over ordered pairs;
    4. ``sub``: ``a - b`` over unordered pairs;
    5. ``subdiv``: ``(a - b) / |c|`` over unordered pairs ``a, b`` and a third item ``c``.

    Items iterate in the order given by ``items``.
    """

    items: tuple[str, ...] = AFE_ITEMS
    unary: tuple[str, ...] = ()
    binary: tuple[str, ...] = ("div", "subdiv")
    max_features: int = 200
    lag_depth: int = 1

    def __post_init__(self):
        if self.max_features < 1:
            raise ValueError("max_features must be >= 1")
        if self.lag_depth < 0:
            raise ValueError("lag_depth must be >= 0")
        unknown = set(self.items) - set(AFE_ITEMS)
        if unknown:
            raise ValueError(f"unknown AFE items: {sorted(unknown)}")
        if len(set(self.items)) != len(self.items):
            raise ValueError("duplicate AFE items")
        if set(self.unary) - set(UNARY_FORMS):
            raise ValueError(f"unary forms must be among {UNARY_FORMS}")
        if set(self.binary) - set(BINARY_FORMS):
            raise ValueError(f"binary forms must be among {BINARY_FORMS}")

    def recipes(self) -> list[tuple[str, str, tuple]]:
        """``(name, form, operands)`` triples in enumeration order."""
        out: list[tuple[str, str, tuple]] = []
        items = self.items

        def emit(name, form, ops):
            if len(out) < self.max_features:
                out.append((name, form, ops))
            return len(out) >= self.max_features

        for k in range(1, self.lag_depth + 1):
            for a in items:
                if emit(f"afe_lag{k}_{a}", "lag", (a, k)):
                    return out
        for form in self.unary:
            tag = "id" if form == "identity" else form
            for a in items:
                if emit(f"afe_{tag}_{a}", form, (a,)):
                    return out
        if "div" in self.binary:
            for a in items:
                for b in items:
                    if a != b and emit(f"afe_div_{a}_{b}", "div", (a, b)):
                        return out
        if "sub" in self.binary:
            for i, a in enumerate(items):
                for b in items[i + 1:]:
                    if emit(f"afe_sub_{a}_{b}", "sub", (a, b)):
                        return out
        if "subdiv" in self.binary:
            for i, a in enumerate(items):
                for b in items[i + 1:]:
                    for c in items:
                        if c in (a, b):
                            continue
                        if emit(f"afe_subdiv_{a}_{b}_{c}", "subdiv", (a, b, c)):
                            return out
        return out

    def names(self) -> list[str]:
        return [r[0] for r in self.recipes()]


def afe_block(history: Mapping[int, np.ndarray], grammar: AfeGrammar) -> np.ndarray:
    """Evaluate the grammar for one year.

    ``history[k]`` holds raw line items (``(n, len(LINE_ITEMS))``) for the
    statement ``k`` years before the current one; ``history[0]`` is required,
    absent lags count as missing.
    """
    cur = extended_items(history[0])
    n = cur.shape[0]
    idx = {name: i for i, name in enumerate(AFE_ITEMS)}
    lagged = {}
    for k in range(1, grammar.lag_depth + 1):
        prev = history.get(k)
        lagged[k] = (extended_items(prev) if prev is not None
                     else np.full_like(cur, np.nan))

    recipes = grammar.recipes()
    out = np.empty((n, len(recipes)))
    for j, (_, form, ops) in enumerate(recipes):
        if form == "lag":
            a, k = ops
            prev = lagged[k][:, idx[a]]
            out[:, j] = _div(cur[:, idx[a]] - prev, np.abs(prev))
        elif form == "identity":
            out[:, j] = cur[:, idx[ops[0]]]
        elif form == "log1p":
            x = cur[:, idx[ops[0]]]
            with np.errstate(invalid="ignore"):
                out[:, j] = np.where(x >= 0, np.log1p(np.where(x >= 0, x, 0.0)), np.nan)
        elif form == "div":
            out[:, j] = _div(cur[:, idx[ops[0]]], cur[:, idx[ops[1]]])
        elif form == "sub":
            out[:, j] = cur[:, idx[ops[0]]] - cur[:, idx[ops[1]]]
        else:  # subdiv
            a, b, c = (cur[:, idx[o]] for o in ops)
            out[:, j] = _div(a - b, np.abs(c))
    return out


# ---------------------------------------------------------------------------
# reported behaviour

RB_COUNT_NAMES = tuple(f"rb_count_{t}" for t in EVENT_TYPES)
RB_TREND_NAMES = tuple(f"rb_trend_{t}" for t in EVENT_TYPES)
RB_SUMMARY_NAMES = ("rb_total_events", "rb_distinct_types", "rb_months_since_last")
RB_NAMES = RB_COUNT_NAMES + RB_TREND_NAMES + RB_SUMMARY_NAMES
TREND_MODES = ("difference", "slope")


def behaviour_block(
    yearly_counts: np.ndarray,
    months_since_last: np.ndarray,
    trend: str = "difference",
) -> np.ndarray:
    """Assemble RB columns from per-year counts.

    ``yearly_counts`` has shape ``(n, W, n_types)`` with axis 1 ordered from
    the first to the final window year.  ``months_since_last`` is NaN where a
    row saw no event.
    """
    if trend not in TREND_MODES:
        raise ValueError(f"trend must be one of {TREND_MODES}")
    yearly_counts = np.asarray(yearly_counts, dtype=float)
    n, w, _ = yearly_counts.shape
    counts = yearly_counts.sum(axis=1)
    if w < 2:
        trends = np.full_like(counts, np.nan)
    elif trend == "difference":
        trends = yearly_counts[:, -1, :] - yearly_counts[:, :-1, :].mean(axis=1)
    else:
        t = np.arange(w, dtype=float) - (w - 1) / 2.0
        trends = np.einsum("nwk,w->nk", yearly_counts, t) / (t @ t)
    total = counts.sum(axis=1, keepdims=True)
    distinct = (counts > 0).sum(axis=1, keepdims=True).astype(float)
    return np.hstack([counts, trends, total, distinct,
                      np.asarray(months_since_last, dtype=float).reshape(n, 1)])


def months_between(event_date: date, reference_year: int) -> int:
    """Whole months from ``event_date`` to Dec 31 of ``reference_year``."""
    return 12 * (reference_year - event_date.year) + (12 - event_date.month)


def _type_index():
    return {t: i for i, t in enumerate(EVENT_TYPES)}


# ---------------------------------------------------------------------------
# public single-entity API


@dataclass(frozen=True)
class FeatureVector:
    """Ordered named features; ``None`` marks a missing value."""

    values: Mapping[str, Optional[float]]
    families: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.families:
            object.__setattr__(self, "families", {k: family_of(k) for k in self.values})
        if list(self.families) != list(self.values):
            raise ValueError("families must be keyed like values")
        for k, v in self.values.items():
            if v is not None and v != v:
                raise ValueError(f"NaN stored for {k}; use None for missing")

    @classmethod
    def from_array(cls, names: Sequence[str], arr) -> "FeatureVector":
        arr = np.asarray(arr, dtype=float).ravel()
        return cls({n: (None if np.isnan(v) else float(v)) for n, v in zip(names, arr)})

    def __getitem__(self, name: str) -> Optional[float]:
        return self.values[name]

    def __len__(self):
        return len(self.values)

    @property
    def names(self) -> list[str]:
        return list(self.values)

    def as_array(self) -> np.ndarray:
        return np.array([np.nan if v is None else v for v in self.values.values()], dtype=float)


def financial_ratios(
    snapshot: BalanceSheetSnapshot, prior: Optional[BalanceSheetSnapshot] = None
) -> FeatureVector:
    """The 18 balance-sheet ratios, before sanitising (infinities kept)."""
    cur = snapshot.as_array()[None, :]
    prev = prior.as_array()[None, :] if prior is not None else None
    vals = financial_ratio_block(cur, prev)[0]
    return FeatureVector.from_array([f"fr_{n}" for n in FR_NAMES], vals)


def afe_candidates(
    snapshots: Sequence[BalanceSheetSnapshot], grammar: AfeGrammar = AfeGrammar()
) -> FeatureVector:
    """AFE features for the latest of a company's year-ordered statements.

    Lags are matched by fiscal year, so a gap in the history leaves the
    corresponding growth features missing.
    """
    if not snapshots:
        raise ValueError("afe_candidates needs at least one snapshot")
    by_year = {s.fiscal_year: s for s in snapshots}
    latest = max(by_year)
    history = {
        k: by_year[latest - k].as_array()[None, :]
        for k in range(0, grammar.lag_depth + 1)
        if latest - k in by_year
    }
    return FeatureVector.from_array(grammar.names(), afe_block(history, grammar)[0])


def behavior_features(
    events: Iterable[FilingEvent],
    window: tuple[int, int],
    trend: str = "difference",
) -> FeatureVector:
    """RB features of one company for calendar years ``window[0]..window[1]``."""
    start, end = window
    if end < start:
        raise ValueError(f"empty window {window}")
    w = end - start + 1
    tidx = _type_index()
    yearly = np.zeros((1, w, len(EVENT_TYPES)))
    last = None
    for e in events:
        y = e.event_date.year
        if start <= y <= end:
            yearly[0, y - start, tidx[e.event_type]] += 1
            if last is None or e.event_date > last:
                last = e.event_date
    months = np.array([np.nan if last is None else months_between(last, end)])
    return FeatureVector.from_array(RB_NAMES, behaviour_block(yearly, months, trend)[0])


# ---------------------------------------------------------------------------
# matrix


def _as_str_array(values) -> np.ndarray:
    return np.asarray(list(values), dtype=object)


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Rows are ``(company_id, reference_year, window_length)`` samples.

    ``values`` is float with NaN meaning missing; family tags follow the
    column-name prefix.
    """

    company_ids: np.ndarray
    reference_years: np.ndarray
    window_lengths: np.ndarray
    columns: tuple[str, ...]
    values: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "company_ids", _as_str_array(self.company_ids))
        object.__setattr__(self, "reference_years", np.asarray(self.reference_years, dtype=np.int64))
        object.__setattr__(self, "window_lengths", np.asarray(self.window_lengths, dtype=np.int64))
        object.__setattr__(self, "columns", tuple(self.columns))
        values = np.asarray(self.values, dtype=float)
        n = len(self.company_ids)
        if values.size == 0:
            values = values.reshape(n, len(self.columns))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        if values.shape != (n, len(self.columns)):
            raise ValueError(f"values shape {values.shape} != ({n}, {len(self.columns)})")
        if not (len(self.reference_years) == len(self.window_lengths) == len(self.labels) == n):
            raise ValueError("row metadata lengths differ")
        if len(set(self.columns)) != len(self.columns):
            raise ValueError("duplicate column names")
        if n and not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0/1")

    @classmethod
    def empty(cls, columns: Sequence[str] = ()) -> "FeatureMatrix":
        return cls(np.array([], dtype=object), [], [], tuple(columns),
                   np.empty((0, len(columns))), [])

    @classmethod
    def concat(cls, parts: Sequence["FeatureMatrix"]) -> "FeatureMatrix":
        parts = list(parts)
        if not parts:
            return cls.empty()
        cols = parts[0].columns
        for p in parts[1:]:
            if p.columns != cols:
                raise ValueError("cannot concatenate matrices with different columns")
        return cls(
            np.concatenate([p.company_ids for p in parts]),
            np.concatenate([p.reference_years for p in parts]),
            np.concatenate([p.window_lengths for p in parts]),
            cols,
            np.vstack([p.values for p in parts]),
            np.concatenate([p.labels for p in parts]),
        )

    def __len__(self):
        return len(self.company_ids)

    @property
    def n_features(self) -> int:
        return len(self.columns)

    @property
    def families(self) -> tuple[str, ...]:
        return tuple(family_of(c) for c in self.columns)

    @property
    def keys(self) -> list[tuple[str, int, int]]:
        return list(zip(self.company_ids.tolist(), self.reference_years.tolist(),
                        self.window_lengths.tolist()))

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)

    def missing_rates(self) -> dict[str, float]:
        if len(self) == 0:
            return {c: 0.0 for c in self.columns}
        rates = self.missing.mean(axis=0)
        return {c: float(r) for c, r in zip(self.columns, rates)}

    def columns_of(self, families: Iterable[str]) -> list[str]:
        fams = set(families)
        return [c for c in self.columns if family_of(c) in fams]

    def take(self, rows) -> "FeatureMatrix":
        rows = np.asarray(rows)
        return FeatureMatrix(self.company_ids[rows], self.reference_years[rows],
                             self.window_lengths[rows], self.columns,
                             self.values[rows], self.labels[rows])

    def select(self, columns: Sequence[str]) -> "FeatureMatrix":
        pos = {c: i for i, c in enumerate(self.columns)}
        missing = [c for c in columns if c not in pos]
        if missing:
            raise KeyError(f"unknown columns: {missing}")
        idx = [pos[c] for c in columns]
        return FeatureMatrix(self.company_ids, self.reference_years, self.window_lengths,
                             tuple(columns), self.values[:, idx], self.labels)

    def with_values(self, values: np.ndarray) -> "FeatureMatrix":
        return FeatureMatrix(self.company_ids, self.reference_years, self.window_lengths,
                             self.columns, values, self.labels)

    def vector(self, row: int) -> FeatureVector:
        return FeatureVector.from_array(self.columns, self.values[row])

    # -- CSV ---------------------------------------------------------------

    def to_frame(self) -> pd.DataFrame:
        meta = pd.DataFrame({
            "company_id": self.company_ids,
            "reference_year": self.reference_years,
            "window_length": self.window_lengths,
            "label": self.labels,
        })
        feats = pd.DataFrame(self.values, columns=list(self.columns))
        return pd.concat([meta, feats], axis=1)

    def to_csv(self, path=None) -> Optional[str]:
        text = self.to_frame().to_csv(index=False, na_rep="", lineterminator="\n")
        if path is None:
            return text
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        return None

    @classmethod
    def from_csv(cls, path_or_text) -> "FeatureMatrix":
        src = path_or_text
        if isinstance(src, str) and "\n" in src:
            src = io.StringIO(src)
        df = pd.read_csv(src, dtype={"company_id": str}, float_precision="round_trip",
                         keep_default_na=False, na_values=[""])
        head = tuple(df.columns[:4])
        if head != KEY_COLUMNS:
            raise ValueError(f"feature CSV must start with {KEY_COLUMNS}, got {head}")
        cols = tuple(df.columns[4:])
        values = df[list(cols)].to_numpy(dtype=float) if cols else np.empty((len(df), 0))
        return cls(df["company_id"].to_numpy(dtype=object), df["reference_year"].to_numpy(),
                   df["window_length"].to_numpy(), cols, values, df["label"].to_numpy())


def sanitize_matrix(matrix: FeatureMatrix) -> FeatureMatrix:
    """Replace ``+inf`` by the column's largest finite value and ``-inf`` by its smallest.

    Columns without a single finite value become entirely missing.  Missing
    cells stay missing.
    """
    vals = matrix.values.copy()
    for j in range(vals.shape[1]):
        col = vals[:, j]
        inf = np.isinf(col)
        if not inf.any():
            continue
        finite = np.isfinite(col)
        if not finite.any():
            col[:] = np.nan
            continue
        col[inf & (col > 0)] = col[finite].max()
        col[inf & (col < 0)] = col[finite].min()
    return matrix.with_values(vals)


@dataclass(frozen=True)
class FeatureConfig:
    fr: bool = True
    afe: bool = True
    rb: bool = True
    grammar: AfeGrammar = AfeGrammar()
    trend: str = "difference"

    def __post_init__(self):
        if not (self.fr or self.afe or self.rb):
            raise ValueError("at least one feature family must be enabled")
        if self.trend not in TREND_MODES:
            raise ValueError(f"trend must be one of {TREND_MODES}")
