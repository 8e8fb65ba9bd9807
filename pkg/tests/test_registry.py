from datetime import date

import pytest

from bankruptlab.catalog import EVENT_CATALOG, EVENT_TYPES, is_known_event
from bankruptlab.registry import (BALANCE_SHEETS_HEADER, COMPANIES_HEADER, FILINGS_HEADER,
                                  CompanyRecord, FilingEvent, Registry, RegistryError,
                                  filter_registry, load_registry, validate_registry,
                                  write_registry)

from conftest import snap


def _write(tmp_path, companies, sheets, filings):
    (tmp_path / "companies.csv").write_text(
        ",".join(COMPANIES_HEADER) + "\n" + "".join(r + "\n" for r in companies))
    (tmp_path / "balance_sheets.csv").write_text(
        ",".join(BALANCE_SHEETS_HEADER) + "\n" + "".join(r + "\n" for r in sheets))
    (tmp_path / "filings.csv").write_text(
        ",".join(FILINGS_HEADER) + "\n" + "".join(r + "\n" for r in filings))
    return tmp_path


SHEET = "1000,400,300,100,20,600,700,300,400,300"


class TestCatalog:
    def test_has_28_unique_snake_case_types(self):
        assert len(EVENT_TYPES) == 28
        assert len(set(EVENT_TYPES)) == 28
        assert all(t == t.lower() and " " not in t and t.isascii() for t in EVENT_TYPES)

    def test_membership(self):
        assert is_known_event("manager_change")
        assert not is_known_event("Manager change")
        assert set(EVENT_CATALOG) == set(EVENT_TYPES)


class TestLoadRegistry:
    def test_counts_from_hand_built_files(self, tmp_path):
        _write(tmp_path, ["A,trade,2015,", "B,services,2016,2019-06-30"],
               [f"A,2017,{SHEET}", f"A,2018,{SHEET}", f"B,2017,{SHEET}", f"B,2018,{SHEET}"],
               ["A,2018-03-01,manager_change", "B,2018-05-02,address_change",
                "B,2019-01-15,merger_demerger"])
        reg = load_registry(tmp_path)
        assert (len(reg.companies), len(reg.snapshots), len(reg.events)) == (2, 4, 3)
        assert reg.companies["B"].bankrupt_date == date(2019, 6, 30)

    def test_headers_only_gives_empty_registry(self, tmp_path):
        reg = load_registry(_write(tmp_path, [], [], []))
        assert len(reg) == 0 and not reg.snapshots and not reg.events

    def test_duplicate_snapshot_rejected_with_line(self, tmp_path):
        _write(tmp_path, ["A,trade,2015,"], [f"A,2017,{SHEET}", f"A,2017,{SHEET}"], [])
        with pytest.raises(RegistryError, match=r"balance_sheets.csv:3: duplicate snapshot"):
            load_registry(tmp_path)

    def test_unknown_event_type(self, tmp_path):
        _write(tmp_path, ["A,trade,2015,"], [], ["A,2018-01-01,name_chnage"])
        with pytest.raises(RegistryError, match=r"filings.csv:2: .*unknown event_type"):
            load_registry(tmp_path)

    def test_unknown_company_reference(self, tmp_path):
        _write(tmp_path, ["A,trade,2015,"], [f"Z,2017,{SHEET}"], [])
        with pytest.raises(RegistryError, match=r"balance_sheets.csv:2: unknown company_id"):
            load_registry(tmp_path)

    def test_malformed_row_reports_line(self, tmp_path):
        _write(tmp_path, ["A,trade,2015,", "B,trade,20x6,"], [], [])
        with pytest.raises(RegistryError, match=r"companies.csv:3: bad incorporated_year"):
            load_registry(tmp_path)

    def test_field_count(self, tmp_path):
        _write(tmp_path, ["A,trade,2015"], [], [])
        with pytest.raises(RegistryError, match=r"companies.csv:2: expected 4 fields"):
            load_registry(tmp_path)

    def test_non_finite_amount(self, tmp_path):
        _write(tmp_path, ["A,trade,2015,"], ["A,2017,inf,400,300,100,20,600,700,300,400,300"], [])
        with pytest.raises(RegistryError, match="non-finite"):
            load_registry(tmp_path)

    def test_bad_header(self, tmp_path):
        _write(tmp_path, [], [], [])
        (tmp_path / "filings.csv").write_text("company,date,type\n")
        with pytest.raises(RegistryError, match=r"filings.csv:1: expected header"):
            load_registry(tmp_path)

    def test_empty_field_is_missing_not_zero(self, tmp_path):
        _write(tmp_path, ["A,trade,2015,"], ["A,2017,1000,,300,0,20,600,700,300,400,300"], [])
        s = load_registry(tmp_path).get_snapshot("A", 2017)
        assert s.current_assets is None and s.cash == 0.0

    def test_row_order_irrelevant_and_round_trip(self, tmp_path, tiny_registry):
        write_registry(tiny_registry, tmp_path / "a")
        texts = tiny_registry.to_csv_texts()
        for name, text in texts.items():
            head, *rows = text.splitlines()
            (tmp_path / "b").mkdir(exist_ok=True)
            (tmp_path / "b" / name).write_text("\n".join([head] + rows[::-1]) + "\n")
        a, b = load_registry(tmp_path / "a"), load_registry(tmp_path / "b")
        assert a == b == tiny_registry
        assert a.to_csv_texts() == texts

    def test_mapping_of_paths(self, tmp_path, tiny_registry):
        paths = write_registry(tiny_registry, tmp_path)
        reg = load_registry({"companies": paths["companies.csv"],
                             "balance_sheets": paths["balance_sheets.csv"],
                             "filings": paths["filings.csv"]})
        assert reg == tiny_registry


class TestRecords:
    def test_bankruptcy_before_incorporation_rejected(self):
        with pytest.raises(RegistryError):
            CompanyRecord("A", "x", 2015, date(2014, 12, 31))

    def test_unknown_event_type_rejected(self):
        with pytest.raises(RegistryError):
            FilingEvent("A", date(2020, 1, 1), "bogus")

    def test_dangling_reference_rejected(self):
        with pytest.raises(RegistryError):
            Registry.from_records([CompanyRecord("A", "x", 2015)], [snap("B", 2016)])

    def test_duplicate_company_rejected(self):
        with pytest.raises(RegistryError):
            Registry.from_records([CompanyRecord("A", "x", 2015), CompanyRecord("A", "y", 2016)])

    def test_as_of_hides_future(self, tiny_registry):
        view = tiny_registry.as_of(2018)
        assert view.companies["B"].bankrupt_date is None
        assert all(e.event_date.year <= 2018 for e in view.events)
        assert len(view.events) == 2
        assert tiny_registry.as_of(2019).companies["B"].bankrupt_date == date(2019, 6, 30)


class TestValidate:
    def test_clean_registry(self, tiny_registry):
        assert len(validate_registry(tiny_registry)) == 0

    def test_rule_a(self):
        reg = Registry.from_records([CompanyRecord("A", "x", 2015)], [snap("A", 2010)])
        (a,) = validate_registry(reg)
        assert (a.company_id, a.rule) == ("A", "a")

    def test_rule_b_event_after_bankruptcy(self):
        reg = Registry.from_records(
            [CompanyRecord("A", "x", 2015, date(2018, 6, 1))], [snap("A", 2016)],
            [FilingEvent("A", date(2018, 7, 1), "address_change")])
        assert [x.rule for x in validate_registry(reg)] == ["b"]

    def test_rule_b_statement_after_bankruptcy(self):
        reg = Registry.from_records([CompanyRecord("A", "x", 2015, date(2018, 6, 1))],
                                    [snap("A", 2017), snap("A", 2018)])
        assert [x.rule for x in validate_registry(reg)] == ["b"]

    def test_rule_c_and_sorting(self):
        reg = Registry.from_records(
            [CompanyRecord("B", "x", 2015), CompanyRecord("A", "x", 2015)], [snap("A", 2010)])
        rep = validate_registry(reg)
        assert [(x.company_id, x.rule) for x in rep] == [("A", "a"), ("B", "c")]
        assert rep.to_csv_text().splitlines()[0] == "company_id,rule,detail"


class TestFilter:
    def test_sector_exclusion(self):
        comps = [CompanyRecord(f"F{i}", "finance", 2015) for i in range(9)]
        comps.append(CompanyRecord("S", "trade", 2015))
        reg = Registry.from_records(comps)
        assert list(filter_registry(reg, {"finance"}).companies) == ["S"]

    def test_identity(self, tiny_registry):
        assert filter_registry(tiny_registry) == tiny_registry

    def test_drop_anomalous_removes_company_and_records(self, tiny_registry):
        comps = list(tiny_registry.companies.values()) + [CompanyRecord("C", "x", 2015)]
        snaps = list(tiny_registry.snapshots.values()) + [snap("C", 2012)]
        events = list(tiny_registry.events) + [FilingEvent("C", date(2013, 1, 1), "seat_change")]
        reg = Registry.from_records(comps, snaps, events)
        out = filter_registry(reg, drop_anomalous=True)
        assert "C" not in out.companies
        assert all(k[0] != "C" for k in out.snapshots)
        assert all(e.company_id != "C" for e in out.events)
        assert "C" in reg.companies  # input untouched

    def test_idempotent(self, small_synth):
        reg, _ = small_synth
        once = filter_registry(reg, {"finance"}, True)
        assert filter_registry(once, {"finance"}, True) == once
