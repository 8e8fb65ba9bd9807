import os
from datetime import date

import pytest
from hypothesis import settings

from bankruptlab.registry import BalanceSheetSnapshot, CompanyRecord, FilingEvent, Registry
from bankruptlab.synth import CovidRegime, SynthConfig, generate_registry

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def snap(cid, year, **items):
    base = dict(total_assets=1000.0, current_assets=400.0, quick_assets=300.0, cash=100.0,
                marketable_securities=20.0, fixed_assets=600.0, total_liabilities=700.0,
                current_liabilities=300.0, long_term_debt=400.0, equity=300.0)
    base.update(items)
    return BalanceSheetSnapshot(cid, year, **base)


@pytest.fixture
def tiny_registry():
    """Two companies, four statements, three filings."""
    companies = [CompanyRecord("A", "trade", 2015),
                 CompanyRecord("B", "services", 2016, date(2019, 6, 30))]
    snaps = [snap("A", 2017), snap("A", 2018), snap("B", 2017), snap("B", 2018)]
    events = [FilingEvent("A", date(2018, 3, 1), "manager_change"),
              FilingEvent("B", date(2018, 5, 2), "address_change"),
              FilingEvent("B", date(2019, 1, 15), "merger_demerger")]
    return Registry.from_records(companies, snaps, events)


@pytest.fixture(scope="session")
def small_synth():
    """500-company registry with the pandemic regime."""
    reg, truth = generate_registry(SynthConfig(n_companies=500, covid_regime=CovidRegime()),
                                   seed=3)
    return reg, truth


@pytest.fixture(scope="session")
def synth_10k():
    """Default 10k-company registry (no pandemic regime)."""
    return generate_registry(SynthConfig(), seed=0)


@pytest.fixture(scope="session")
def synth_10k_covid():
    """Default 10k-company registry with filing delays and reduced hazard from 2020."""
    return generate_registry(SynthConfig(covid_regime=CovidRegime(hazard_multiplier=0.3,
                                                                  delay_probability=0.5)),
                             seed=0)


ACCEPTANCE_KEY = "acceptance_lines"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, ACCEPTANCE_KEY, None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(lines):
        terminalreporter.write_line(line)
