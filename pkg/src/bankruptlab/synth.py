"""Synthetic corporate registries with a planted behavioural distress signal.

Each company carries a latent health score following an AR(1) process.
Balance-sheet line items are noisy monotone functions of health, the
yearly bankruptcy probability is ``logistic(a + b * health)`` with ``a``
calibrated so the stationary mean hazard equals ``base_hazard``, and
restructuring filings arrive as Poisson counts whose intensity grows as
health declines.  An optional Covid-like regime scales hazards down and
pushes a share of filings past year end.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Mapping, Optional

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from .catalog import EVENT_TYPES
from .registry import LINE_ITEMS, BalanceSheetSnapshot, CompanyRecord, FilingEvent, Registry

DEFAULT_SECTORS = {
    "services": 0.30,
    "trade": 0.22,
    "construction": 0.14,
    "hospitality": 0.10,
    "industry": 0.10,
    "transport": 0.06,
    "finance": 0.08,
}

# expected filings per year for a company of average health
_COMMON = {
    "manager_change": 0.16,
    "registered_office_change": 0.14,
    "address_change": 0.10,
    "administrator_change": 0.08,
    "associate_change": 0.07,
    "social_capital_change": 0.06,
    "seat_change": 0.05,
    "authorized_signatory_change": 0.04,
    "auditor_change": 0.04,
    "transfer_of_business_assets": 0.03,
    "daily_management_delegate_change": 0.03,
    "social_object_change": 0.03,
    "legal_form_change": 0.02,
    "merger_demerger": 0.02,
    "chairman_director_change": 0.02,
}
DEFAULT_EVENT_RATES = {t: _COMMON.get(t, 0.008) for t in EVENT_TYPES}

DEFAULT_ITEM_MISSING = {"quick_assets": 0.10, "marketable_securities": 0.35, "fixed_assets": 0.03}


@dataclass(frozen=True)
class CovidRegime:
    start_year: int = 2020
    hazard_multiplier: float = 0.3
    delay_probability: float = 0.5

    def __post_init__(self):
        if self.hazard_multiplier < 0:
            raise ValueError("hazard_multiplier must be >= 0")
        if not 0 <= self.delay_probability <= 1:
            raise ValueError("delay_probability must be in [0, 1]")


@dataclass(frozen=True)
class SynthConfig:
    n_companies: int = 10_000
    start_year: int = 2010
    end_year: int = 2022
    sector_weights: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_SECTORS))
    base_hazard: float = 0.022
    hazard_slope: float = -1.5
    hazard_trend: float = 0.0
    persistence: float = 0.8
    noise_scale: float = 0.6
    measurement_noise: float = 1.0
    event_rates: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_EVENT_RATES))
    event_sensitivity: float = 2.0
    exit_rate: float = 0.02
    statement_gap_rate: float = 0.02
    item_missing_rates: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_ITEM_MISSING))
    preexisting_share: float = 0.6
    covid_regime: Optional[CovidRegime] = None

    def __post_init__(self):
        if self.n_companies < 1:
            raise ValueError("n_companies must be >= 1")
        if self.end_year <= self.start_year:
            raise ValueError("end_year must exceed start_year")
        if not 0 < self.base_hazard < 1:
            raise ValueError("base_hazard must be in (0, 1)")
        if not 0 <= self.persistence < 1:
            raise ValueError("persistence must be in [0, 1)")
        if self.noise_scale <= 0 or self.measurement_noise < 0:
            raise ValueError("noise scales must be positive")
        if not self.sector_weights or min(self.sector_weights.values()) < 0 \
                or sum(self.sector_weights.values()) <= 0:
            raise ValueError("sector_weights must be non-negative with a positive sum")
        unknown = set(self.event_rates) - set(EVENT_TYPES)
        if unknown:
            raise ValueError(f"unknown event types in event_rates: {sorted(unknown)}")
        if min(self.event_rates.values(), default=0) < 0:
            raise ValueError("event rates must be >= 0")
        for name, p in [("exit_rate", self.exit_rate), ("statement_gap_rate", self.statement_gap_rate),
                        ("preexisting_share", self.preexisting_share)]:
            if not 0 <= p < 1:
                raise ValueError(f"{name} must be in [0, 1)")
        if set(self.item_missing_rates) - set(LINE_ITEMS):
            raise ValueError("item_missing_rates names unknown line items")

    @property
    def stationary_sd(self) -> float:
        return self.noise_scale / np.sqrt(1.0 - self.persistence ** 2)


@dataclass(frozen=True)
class CompanyTruth:
    first_year: int
    health: np.ndarray           # per year from first_year
    hazard: np.ndarray           # bankruptcy probability per year
    event_intensity: np.ndarray  # expected filings per year, all types

    def at(self, year: int) -> tuple[float, float, float]:
        i = year - self.first_year
        return float(self.health[i]), float(self.hazard[i]), float(self.event_intensity[i])


@dataclass(frozen=True)
class GroundTruth:
    intercept: float
    companies: Mapping[str, CompanyTruth]


def calibrate_intercept(cfg: SynthConfig) -> float:
    """Intercept ``a`` with ``E[logistic(a + b h)] = base_hazard`` for stationary ``h``."""
    nodes, weights = np.polynomial.hermite_e.hermegauss(60)
    weights = weights / weights.sum()
    h = nodes * cfg.stationary_sd

    def gap(a):
        return float(weights @ expit(a + cfg.hazard_slope * h)) - cfg.base_hazard

    return brentq(gap, -40.0, 40.0, xtol=1e-12)


def _balance_sheets(rng, health: np.ndarray, log_size: float, cfg: SynthConfig) -> np.ndarray:
    """Line items (rows = years, columns = ``LINE_ITEMS``), NaN where missing."""
    n = len(health)
    z = rng.normal(size=(n, 7))
    u = rng.uniform(size=(n, 2))
    o = health + cfg.measurement_noise * z[:, 0]
    ta = np.exp(log_size + 0.1 * o + 0.05 * z[:, 1])
    equity = ta * np.minimum(0.25 + 0.15 * o + 0.05 * z[:, 2], 0.95)
    tl = np.maximum(ta - equity + 0.01 * z[:, 3] * ta, 0.0)
    ca = ta * expit(0.2 + 0.3 * o + 0.3 * z[:, 4])
    fa = ta - ca
    cash = ca * expit(-1.0 + 0.5 * o + 0.3 * z[:, 5])
    ms = ca * 0.05 * u[:, 0]
    qa = cash + ms + (ca - cash - ms) * (0.3 + 0.5 * u[:, 1])
    cl = tl * expit(-0.3 * o + 0.3 * z[:, 6])
    ltd = tl - cl
    cols = dict(total_assets=ta, current_assets=ca, quick_assets=qa, cash=cash,
                marketable_securities=ms, fixed_assets=fa, total_liabilities=tl,
                current_liabilities=cl, long_term_debt=ltd, equity=equity)
    out = np.round(np.column_stack([cols[name] for name in LINE_ITEMS]), 2)
    miss_p = np.array([cfg.item_missing_rates.get(name, 0.0) for name in LINE_ITEMS])
    out[rng.uniform(size=out.shape) < miss_p] = np.nan
    return out


def _day_of_year(year: int, offset: int) -> date:
    """``offset`` days after Jan 1, clamped to Dec 31."""
    return min(date(year, 1, 1) + timedelta(days=offset), date(year, 12, 31))


def generate_registry(cfg: SynthConfig = SynthConfig(), seed: int = 0) -> tuple[Registry, GroundTruth]:
    """Draw a registry and the latent quantities that produced it.

    Every company gets its own generator spawned from ``seed``, so a
    company's records do not depend on how many others are generated.
    """
    a = calibrate_intercept(cfg)
    sectors = sorted(cfg.sector_weights)
    sw = np.array([cfg.sector_weights[s] for s in sectors], dtype=float)
    sw /= sw.sum()
    rates = np.array([cfg.event_rates.get(t, 0.0) for t in EVENT_TYPES], dtype=float)
    regime = cfg.covid_regime
    horizon_end = date(cfg.end_year, 12, 31)
    width = len(str(cfg.n_companies - 1))

    cum_w = np.cumsum(sw)
    companies, snapshots, events = [], [], []
    truths = {}
    for idx, child in enumerate(np.random.SeedSequence(seed).spawn(cfg.n_companies)):
        rng = np.random.default_rng(child)
        cid = f"C{idx:0{max(width, 6)}d}"
        sector = sectors[min(int(np.searchsorted(cum_w, rng.uniform() * cum_w[-1], side="right")),
                             len(sectors) - 1)]
        if rng.uniform() < cfg.preexisting_share:
            inc = int(rng.integers(cfg.start_year - 20, cfg.start_year))
        else:
            inc = int(rng.integers(cfg.start_year, cfg.end_year))
        first = max(inc, cfg.start_year)
        years = np.arange(first, cfg.end_year + 1)
        n_years = len(years)
        log_size = rng.normal(13.0, 1.2)

        shocks = rng.normal(0.0, cfg.noise_scale, size=n_years)
        h = np.empty(n_years)
        h[0] = shocks[0] / cfg.noise_scale * cfg.stationary_sd
        for i in range(1, n_years):
            h[i] = cfg.persistence * h[i - 1] + shocks[i]
        hazard = expit(a + cfg.hazard_slope * h + cfg.hazard_trend * (years - cfg.start_year))
        if regime is not None:
            hazard = np.where(years >= regime.start_year, hazard * regime.hazard_multiplier, hazard)
            hazard = np.clip(hazard, 0.0, 1.0)
        intensity = np.exp(-cfg.event_sensitivity * h)

        u = rng.uniform(size=(n_years, 3))  # bankruptcy, exit, statement gap
        items = _balance_sheets(rng, h, log_size, cfg)
        counts = rng.poisson(rates[None, :] * intensity[:, None])
        n_ev = int(counts.sum())
        ev_day = rng.integers(0, 366, size=n_ev)
        ev_delay = rng.uniform(size=n_ev)
        ev_shift = rng.integers(0, 181, size=n_ev)
        bank_day = rng.integers(0, 366, size=n_years)

        bankrupt: Optional[date] = None
        last = n_years - 1
        for i in range(1, n_years):
            if u[i, 0] < hazard[i]:
                bankrupt = _day_of_year(int(years[i]), int(bank_day[i]))
                last = i
                break
            if u[i, 1] < cfg.exit_rate:
                last = i - 1
                break
        for i in range(last + 1):
            if (bankrupt is not None and i == last) or (i > 0 and u[i, 2] < cfg.statement_gap_rate):
                continue
            row = items[i].tolist()
            snapshots.append(BalanceSheetSnapshot(cid, int(years[i]), **{
                name: (None if v != v else v) for name, v in zip(LINE_ITEMS, row)
            }))
        j = 0
        for i in range(n_years):
            year = int(years[i])
            delayed_year = regime is not None and year >= regime.start_year
            for k, c in enumerate(counts[i].tolist()):
                for _ in range(c):
                    d = _day_of_year(year, int(ev_day[j]))
                    if delayed_year and ev_delay[j] < regime.delay_probability:
                        d = date(year + 1, 1, 1) + timedelta(days=int(ev_shift[j]))
                    j += 1
                    if i > last or d > horizon_end or (bankrupt is not None and d > bankrupt):
                        continue
                    events.append(FilingEvent(cid, d, EVENT_TYPES[k]))

        companies.append(CompanyRecord(cid, sector, inc, bankrupt))
        truths[cid] = CompanyTruth(first, h, hazard, intensity * rates.sum())

    registry = Registry.from_records(companies, snapshots, events)
    return registry, GroundTruth(a, truths)
