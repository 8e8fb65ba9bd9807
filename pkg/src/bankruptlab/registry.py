"""Corporate registry data model, CSV ingestion, validation and filtering."""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field, replace
from datetime import date
from functools import cached_property
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Optional, Union

import numpy as np

from .catalog import EVENT_CATALOG

LINE_ITEMS: tuple[str, ...] = (
    "total_assets",
    "current_assets",
    "quick_assets",
    "cash",
    "marketable_securities",
    "fixed_assets",
    "total_liabilities",
    "current_liabilities",
    "long_term_debt",
    "equity",
)

COMPANIES_HEADER = ("company_id", "sector", "incorporated_year", "bankrupt_date")
BALANCE_SHEETS_HEADER = ("company_id", "fiscal_year") + LINE_ITEMS
FILINGS_HEADER = ("company_id", "event_date", "event_type")

FILE_NAMES = {
    "companies": "companies.csv",
    "balance_sheets": "balance_sheets.csv",
    "filings": "filings.csv",
}


class RegistryError(ValueError):
    """Raised when registry input violates the data model."""


@dataclass(frozen=True)
class CompanyRecord:
    company_id: str
    sector: str
    incorporated_year: int
    bankrupt_date: Optional[date] = None

    def __post_init__(self):
        if not self.company_id:
            raise RegistryError("empty company_id")
        if self.bankrupt_date is not None and self.bankrupt_date < date(self.incorporated_year, 1, 1):
            raise RegistryError(
                f"{self.company_id}: bankrupt_date {self.bankrupt_date} precedes "
                f"incorporation year {self.incorporated_year}"
            )


@dataclass(frozen=True)
class BalanceSheetSnapshot:
    """One fiscal-year balance sheet.  ``None`` marks a missing line item."""

    company_id: str
    fiscal_year: int
    total_assets: Optional[float] = None
    current_assets: Optional[float] = None
    quick_assets: Optional[float] = None
    cash: Optional[float] = None
    marketable_securities: Optional[float] = None
    fixed_assets: Optional[float] = None
    total_liabilities: Optional[float] = None
    current_liabilities: Optional[float] = None
    long_term_debt: Optional[float] = None
    equity: Optional[float] = None

    def __post_init__(self):
        for name in LINE_ITEMS:
            value = getattr(self, name)
            if value is not None and not math.isfinite(value):
                raise RegistryError(
                    f"{self.company_id}/{self.fiscal_year}: non-finite {name}={value!r}"
                )

    @property
    def key(self) -> tuple[str, int]:
        return (self.company_id, self.fiscal_year)

    def as_array(self) -> np.ndarray:
        """Line items in ``LINE_ITEMS`` order, NaN where missing."""
        return np.array(
            [np.nan if getattr(self, n) is None else getattr(self, n) for n in LINE_ITEMS],
            dtype=float,
        )


@dataclass(frozen=True)
class FilingEvent:
    company_id: str
    event_date: date
    event_type: str

    def __post_init__(self):
        if self.event_type not in EVENT_CATALOG:
            raise RegistryError(f"{self.company_id}: unknown event_type {self.event_type!r}")


def _event_sort_key(e: FilingEvent):
    return (e.company_id, e.event_date, e.event_type)


@dataclass(frozen=True)
class Registry:
    """Immutable collection of companies, balance sheets and filings.

    Construction canonicalises ordering (companies and snapshots sorted by key,
    events by company, date and type), so two registries holding the same
    records compare and serialise identically regardless of input order.
    """

    companies: Mapping[str, CompanyRecord] = field(default_factory=dict)
    snapshots: Mapping[tuple[str, int], BalanceSheetSnapshot] = field(default_factory=dict)
    events: tuple[FilingEvent, ...] = ()

    def __post_init__(self):
        companies = dict(sorted(self.companies.items()))
        snapshots = dict(sorted(self.snapshots.items()))
        for key, snap in snapshots.items():
            if key != snap.key:
                raise RegistryError(f"snapshot keyed {key} carries key {snap.key}")
            if snap.company_id not in companies:
                raise RegistryError(f"snapshot {key} references unknown company_id")
        events = tuple(sorted(self.events, key=_event_sort_key))
        for e in events:
            if e.company_id not in companies:
                raise RegistryError(f"event {e} references unknown company_id")
        object.__setattr__(self, "companies", MappingProxyType(companies))
        object.__setattr__(self, "snapshots", MappingProxyType(snapshots))
        object.__setattr__(self, "events", events)

    @classmethod
    def from_records(
        cls,
        companies: Iterable[CompanyRecord],
        snapshots: Iterable[BalanceSheetSnapshot] = (),
        events: Iterable[FilingEvent] = (),
    ) -> "Registry":
        comp: dict[str, CompanyRecord] = {}
        for c in companies:
            if c.company_id in comp:
                raise RegistryError(f"duplicate company_id {c.company_id!r}")
            comp[c.company_id] = c
        snaps: dict[tuple[str, int], BalanceSheetSnapshot] = {}
        for s in snapshots:
            if s.key in snaps:
                raise RegistryError(f"duplicate snapshot for {s.key}")
            snaps[s.key] = s
        return cls(comp, snaps, tuple(events))

    def __eq__(self, other):
        if not isinstance(other, Registry):
            return NotImplemented
        return (
            dict(self.companies) == dict(other.companies)
            and dict(self.snapshots) == dict(other.snapshots)
            and self.events == other.events
        )

    __hash__ = None

    def __len__(self):
        return len(self.companies)

    @cached_property
    def events_by_company(self) -> Mapping[str, tuple[FilingEvent, ...]]:
        grouped: dict[str, list[FilingEvent]] = {}
        for e in self.events:
            grouped.setdefault(e.company_id, []).append(e)
        return MappingProxyType({k: tuple(v) for k, v in grouped.items()})

    @cached_property
    def snapshot_years(self) -> Mapping[str, tuple[int, ...]]:
        years: dict[str, list[int]] = {}
        for cid, fy in self.snapshots:
            years.setdefault(cid, []).append(fy)
        return MappingProxyType({k: tuple(v) for k, v in years.items()})

    @cached_property
    def horizon_year(self) -> Optional[int]:
        """Latest calendar year touched by any record (``None`` when empty)."""
        years = [fy for _, fy in self.snapshots]
        years += [e.event_date.year for e in self.events]
        years += [c.bankrupt_date.year for c in self.companies.values() if c.bankrupt_date]
        return max(years) if years else None

    def get_snapshot(self, company_id: str, fiscal_year: int) -> Optional[BalanceSheetSnapshot]:
        return self.snapshots.get((company_id, fiscal_year))

    def as_of(self, year: int) -> "Registry":
        """View holding only what was on record by Dec 31 of ``year``.

        Later statements and filings are dropped and bankruptcies declared
        after the cutoff are hidden.
        """
        cutoff = date(year, 12, 31)
        companies = {
            cid: (c if c.bankrupt_date is None or c.bankrupt_date <= cutoff
                  else replace(c, bankrupt_date=None))
            for cid, c in self.companies.items()
        }
        snaps = {k: s for k, s in self.snapshots.items() if s.fiscal_year <= year}
        events = tuple(e for e in self.events if e.event_date <= cutoff)
        return Registry(companies, snaps, events)

    def subset(self, company_ids: Iterable[str]) -> "Registry":
        keep = set(company_ids)
        return Registry(
            {cid: c for cid, c in self.companies.items() if cid in keep},
            {k: s for k, s in self.snapshots.items() if k[0] in keep},
            tuple(e for e in self.events if e.company_id in keep),
        )

    def to_csv_texts(self) -> dict[str, str]:
        """Canonical serialisation keyed by file name."""
        out = {}
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COMPANIES_HEADER)
        for c in self.companies.values():
            w.writerow([
                c.company_id, c.sector, c.incorporated_year,
                c.bankrupt_date.isoformat() if c.bankrupt_date else "",
            ])
        out[FILE_NAMES["companies"]] = buf.getvalue()

        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(BALANCE_SHEETS_HEADER)
        for s in self.snapshots.values():
            row = [s.company_id, s.fiscal_year]
            for name in LINE_ITEMS:
                v = getattr(s, name)
                row.append("" if v is None else repr(float(v)))
            w.writerow(row)
        out[FILE_NAMES["balance_sheets"]] = buf.getvalue()

        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(FILINGS_HEADER)
        for e in self.events:
            w.writerow([e.company_id, e.event_date.isoformat(), e.event_type])
        out[FILE_NAMES["filings"]] = buf.getvalue()
        return out


# ---------------------------------------------------------------------------
# ingestion

PathLike = Union[str, os.PathLike]


def _resolve_paths(paths) -> dict[str, Path]:
    if isinstance(paths, (str, os.PathLike)):
        root = Path(paths)
        return {k: root / v for k, v in FILE_NAMES.items()}
    resolved = {k: Path(v) for k, v in dict(paths).items()}
    missing = set(FILE_NAMES) - set(resolved)
    if missing:
        raise RegistryError(f"missing registry file paths: {sorted(missing)}")
    return resolved


def _read_rows(path: Path, header: tuple[str, ...]):
    if not path.exists():
        raise RegistryError(f"{path}: file not found")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            got = tuple(next(reader))
        except StopIteration:
            raise RegistryError(f"{path}:1: missing header") from None
        if got != header:
            raise RegistryError(f"{path}:1: expected header {','.join(header)}, got {','.join(got)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise RegistryError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            yield lineno, row


def _parse_int(text: str, what: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ValueError(f"bad {what} {text!r}") from None


def _parse_date(text: str, what: str) -> date:
    try:
        return date.fromisoformat(text)
    except ValueError:
        raise ValueError(f"bad {what} {text!r}") from None


def _parse_amount(text: str, what: str) -> Optional[float]:
    if text == "":
        return None
    try:
        v = float(text)
    except ValueError:
        raise ValueError(f"bad {what} {text!r}") from None
    if not math.isfinite(v):
        raise ValueError(f"non-finite {what} {text!r}")
    return v


def load_registry(paths) -> Registry:
    """Read ``companies.csv``, ``balance_sheets.csv`` and ``filings.csv``.

    ``paths`` is either a directory holding the three files or a mapping with
    keys ``companies``, ``balance_sheets`` and ``filings``.  Every problem is
    reported as :class:`RegistryError` carrying ``file:line``.
    """
    files = _resolve_paths(paths)

    companies: dict[str, CompanyRecord] = {}
    path = files["companies"]
    for lineno, row in _read_rows(path, COMPANIES_HEADER):
        try:
            cid, sector, inc, bdate = row
            rec = CompanyRecord(
                company_id=cid,
                sector=sector,
                incorporated_year=_parse_int(inc, "incorporated_year"),
                bankrupt_date=_parse_date(bdate, "bankrupt_date") if bdate else None,
            )
        except ValueError as exc:
            raise RegistryError(f"{path}:{lineno}: {exc}") from None
        if rec.company_id in companies:
            raise RegistryError(f"{path}:{lineno}: duplicate company_id {cid!r}")
        companies[rec.company_id] = rec

    snapshots: dict[tuple[str, int], BalanceSheetSnapshot] = {}
    path = files["balance_sheets"]
    for lineno, row in _read_rows(path, BALANCE_SHEETS_HEADER):
        try:
            amounts = {n: _parse_amount(t, n) for n, t in zip(LINE_ITEMS, row[2:])}
            snap = BalanceSheetSnapshot(row[0], _parse_int(row[1], "fiscal_year"), **amounts)
        except ValueError as exc:
            raise RegistryError(f"{path}:{lineno}: {exc}") from None
        if snap.company_id not in companies:
            raise RegistryError(f"{path}:{lineno}: unknown company_id {snap.company_id!r}")
        if snap.key in snapshots:
            raise RegistryError(f"{path}:{lineno}: duplicate snapshot for {snap.key}")
        snapshots[snap.key] = snap

    events: list[FilingEvent] = []
    path = files["filings"]
    for lineno, row in _read_rows(path, FILINGS_HEADER):
        try:
            ev = FilingEvent(row[0], _parse_date(row[1], "event_date"), row[2])
        except ValueError as exc:
            raise RegistryError(f"{path}:{lineno}: {exc}") from None
        if ev.company_id not in companies:
            raise RegistryError(f"{path}:{lineno}: unknown company_id {ev.company_id!r}")
        events.append(ev)

    return Registry(companies, snapshots, tuple(events))


def write_registry(registry: Registry, directory: PathLike) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = {}
    for name, text in registry.to_csv_texts().items():
        p = directory / name
        p.write_text(text, encoding="utf-8")
        written[name] = p
    return written


# ---------------------------------------------------------------------------
# validation and filtering

RULES = {
    "a": "statement for a fiscal year before incorporation",
    "b": "statement or filing dated after the bankruptcy date",
    "c": "company has no balance-sheet statements",
}


@dataclass(frozen=True, order=True)
class Anomaly:
    company_id: str
    rule: str
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    anomalies: tuple[Anomaly, ...] = ()

    def __len__(self):
        return len(self.anomalies)

    def __iter__(self):
        return iter(self.anomalies)

    def companies(self, rules: Iterable[str] = ("a", "b", "c")) -> set[str]:
        rules = set(rules)
        return {a.company_id for a in self.anomalies if a.rule in rules}

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["company_id", "rule", "detail"])
        for a in self.anomalies:
            w.writerow([a.company_id, a.rule, a.detail])
        return buf.getvalue()


def validate_registry(registry: Registry) -> ValidationReport:
    found = []
    years = registry.snapshot_years
    for cid, comp in registry.companies.items():
        fys = years.get(cid, ())
        if not fys:
            found.append(Anomaly(cid, "c", "no statements"))
        for fy in fys:
            if fy < comp.incorporated_year:
                found.append(Anomaly(
                    cid, "a", f"fiscal_year {fy} < incorporated_year {comp.incorporated_year}"
                ))
        if comp.bankrupt_date is not None:
            for fy in fys:
                # a statement is dated at its fiscal year end
                if date(fy, 12, 31) > comp.bankrupt_date:
                    found.append(Anomaly(
                        cid, "b", f"statement {fy} after bankruptcy {comp.bankrupt_date}"
                    ))
            for e in registry.events_by_company.get(cid, ()):
                if e.event_date > comp.bankrupt_date:
                    found.append(Anomaly(
                        cid, "b",
                        f"filing {e.event_type} on {e.event_date} after bankruptcy {comp.bankrupt_date}",
                    ))
    return ValidationReport(tuple(sorted(found)))


def filter_registry(
    registry: Registry,
    excluded_sectors: Iterable[str] = (),
    drop_anomalous: bool = False,
) -> Registry:
    """Drop companies in ``excluded_sectors`` and, optionally, those breaking rules (a)/(b)."""
    excluded = set(excluded_sectors)
    keep = {cid for cid, c in registry.companies.items() if c.sector not in excluded}
    if drop_anomalous:
        keep -= validate_registry(registry).companies(rules=("a", "b"))
    if len(keep) == len(registry.companies):
        return registry
    return registry.subset(keep)
