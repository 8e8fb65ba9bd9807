import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bankruptlab.evaluation import (EVAL_SPLITS, AblationReport, CellResult, RocCurve,
                                    SingleClassError, ablation_matrix, auc, confusion,
                                    drift_report, emit_roc_csv, prepare_feature_sets,
                                    roc_curve)
from bankruptlab.features import FeatureMatrix
from bankruptlab.windows import SplitBundle

COLS = ("fr_a", "fr_b", "afe_x", "rb_c")
FAST = {"logistic": {}, "gbdt": {"n_rounds": 10, "max_leaves": 4, "min_child_samples": 5}}


def mann_whitney(scores, labels):
    """Oracle: fraction of (positive, negative) pairs ranked correctly, ties count half."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum((p > q) + 0.5 * (p == q) for p, q in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


def matrix(rng, n, year, cols=COLS, rb_zero=False):
    X = rng.normal(size=(n, len(cols)))
    y = (rng.random(n) < 1 / (1 + np.exp(-(1.5 * X[:, 0] + 1.5 * X[:, -1] - 1.5)))).astype(int)
    if rb_zero:
        X[:, [i for i, c in enumerate(cols) if c.startswith("rb_")]] = 0.0
    ids = np.array([f"C{year}{i:05d}" for i in range(n)])
    return FeatureMatrix(ids, np.full(n, year), np.ones(n, dtype=int), cols, X, y)


def bundle(seed=0, rb_zero=False, same_eval=False, n=400):
    rng = np.random.default_rng(seed)
    tr, te = matrix(rng, n, 2015, rb_zero=rb_zero), matrix(rng, n // 2, 2016, rb_zero=rb_zero)
    pre = te if same_eval else matrix(rng, n // 2, 2019, rb_zero=rb_zero)
    post = te if same_eval else matrix(rng, n // 2, 2020, rb_zero=rb_zero)
    return SplitBundle(1, tr, te, pre, post, seed=0)


class TestConfusion:
    def test_threshold_inclusive(self):
        c = confusion([0.1, 0.5, 0.5, 0.9], [0, 1, 0, 1], 0.5)
        assert (c.tp, c.fp, c.tn, c.fn) == (2, 1, 1, 0)
        assert c.tpr == 1.0 and c.fpr == 0.5

    def test_threshold_above_all(self):
        c = confusion([0.1, 0.9], [0, 1], 1.0)
        assert (c.tp, c.fp, c.tn, c.fn) == (0, 0, 1, 1)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length"):
            confusion([0.1, 0.2], [1], 0.5)

    @given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), max_size=30),
           st.floats(0, 1))
    def test_counts_partition(self, pairs, thr):
        s = [p[0] for p in pairs]
        y = [p[1] for p in pairs]
        c = confusion(s, y, thr)
        assert c.total == len(pairs)
        assert c.tp + c.fn == sum(y)


class TestRoc:
    def test_worked_example(self):
        assert auc([0.2, 0.4, 0.4, 0.8], [0, 1, 0, 1]) == pytest.approx(0.875, abs=1e-12)

    def test_ties_collapse(self):
        roc = roc_curve([0.2, 0.4, 0.4, 0.8], [0, 1, 0, 1])
        assert roc.points == [(0.0, 0.0), (0.0, 0.5), (0.5, 1.0), (1.0, 1.0)]
        assert roc.thresholds[0] == np.inf
        np.testing.assert_array_equal(roc.thresholds[1:], [0.8, 0.4, 0.2])

    def test_all_tied_is_half(self):
        assert auc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5

    def test_perfect_and_reversed(self):
        assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
        assert auc([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0]) == 0.0

    def test_single_class(self):
        with pytest.raises(SingleClassError):
            auc([0.1, 0.2], [1, 1])
        with pytest.raises(SingleClassError):
            roc_curve([], [])

    @given(st.lists(st.tuples(st.integers(0, 8), st.integers(0, 1)), min_size=2, max_size=40))
    def test_equals_mann_whitney(self, pairs):
        s = [p[0] / 8 for p in pairs]
        y = [p[1] for p in pairs]
        if len(set(y)) < 2:
            with pytest.raises(SingleClassError):
                auc(s, y)
            return
        assert auc(s, y) == pytest.approx(mann_whitney(s, y), abs=1e-12)
        # monotone transform and label swap
        assert auc([np.exp(3 * v) for v in s], y) == pytest.approx(auc(s, y), abs=1e-12)
        assert auc([-v for v in s], [1 - v for v in y]) == pytest.approx(auc(s, y), abs=1e-12)

    @given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 1)), min_size=2, max_size=30))
    def test_curve_monotone_ends_at_corners(self, pairs):
        y = [p[1] for p in pairs]
        if len(set(y)) < 2:
            return
        roc = roc_curve([p[0] for p in pairs], y)
        assert roc.points[0] == (0.0, 0.0) and roc.points[-1] == (1.0, 1.0)
        assert np.all(np.diff(roc.fpr) >= 0) and np.all(np.diff(roc.tpr) >= 0)
        assert len(roc) == len(set(p[0] for p in pairs)) + 1

    def test_csv_round_trip_exact(self):
        rng = np.random.default_rng(0)
        roc = roc_curve(rng.random(50), rng.integers(0, 2, 50))
        text = roc.to_csv_text()
        assert text.splitlines()[0] == "fpr,tpr,threshold"
        back = RocCurve.from_csv_text(text)
        for a, b in ((back.fpr, roc.fpr), (back.tpr, roc.tpr), (back.thresholds, roc.thresholds)):
            np.testing.assert_array_equal(a, b)

    def test_csv_bad_header(self):
        with pytest.raises(ValueError):
            RocCurve.from_csv_text("a,b,c\n1,2,3\n")


class TestPrepare:
    def test_carves_sets_by_family(self):
        per = prepare_feature_sets({1: bundle()})
        assert per[1]["FR"].train.columns == ("fr_a", "fr_b")
        assert per[1]["AFE+RB"].train.columns == ("afe_x", "rb_c")

    def test_key_mismatch_rejected(self):
        b = bundle()
        shuffled = SplitBundle(1, b.train.take(np.arange(len(b.train))[::-1]), b.test,
                               b.pre_covid, b.post_covid, seed=0)
        with pytest.raises(ValueError, match="key"):
            prepare_feature_sets({1: {"FR": b.select(["fr_a"]),
                                      "FR+RB": shuffled.select(["fr_a", "rb_c"])}},
                                 ["FR", "FR+RB"])

    def test_hybrid_must_extend_single(self):
        b = bundle()
        with pytest.raises(ValueError, match="lacks"):
            prepare_feature_sets({1: {"FR": b.select(["fr_a", "fr_b"]),
                                      "FR+RB": b.select(["fr_a", "rb_c"])}}, ["FR", "FR+RB"])

    def test_unknown_set(self):
        with pytest.raises(ValueError):
            prepare_feature_sets({1: bundle()}, ["RB"])


@pytest.fixture(scope="module")
def report():
    return ablation_matrix({1: bundle()}, families=("logistic", "gbdt"),
                           grids={"logistic": {"l2": [0.1, 1.0]}}, base_params=FAST,
                           target_rate=None, folds=3)


class TestAblation:
    def test_cardinality(self, report):
        assert len(report) == 2 * 4 * 3
        assert len(report.cells()) == 8
        assert report.splits == list(EVAL_SPLITS)

    def test_grid_choice_recorded(self, report):
        assert report.configs[("logistic", "FR", 1, 0)]["l2"] in (0.1, 1.0)

    def test_rb_helps_when_it_carries_signal(self, report):
        for fam in ("logistic", "gbdt"):
            assert report.auc(fam, "FR+RB", 1, "test") > report.auc(fam, "FR", 1, "test")

    def test_deltas(self, report):
        d = report.deltas()
        assert len(d) == 2 * 2 * 3
        r = next(x for x in d if (x["family"], x["hybrid"], x["split"]) == ("gbdt", "FR+RB", "test"))
        single = report.auc("gbdt", "FR", 1, "test")
        assert r["delta"] == pytest.approx(report.auc("gbdt", "FR+RB", 1, "test") - single)
        assert r["delta_pct"] == pytest.approx(100 * r["delta"] / single)

    def test_csv_layout(self, report):
        lines = report.to_csv_text().splitlines()
        assert lines[0] == "family,feature_set,window_length,test,pre_covid,post_covid"
        assert len(lines) == 9

    def test_subset_of_sets(self):
        r = ablation_matrix({1: bundle()}, families=("logistic",), feature_sets=("FR",),
                            grids={}, target_rate=None)
        assert r.feature_sets == ["FR"] and r.deltas() == []

    def test_zeroed_rb_adds_nothing(self):
        r = ablation_matrix({1: bundle(rb_zero=True)}, families=("logistic", "gbdt"),
                            feature_sets=("FR", "FR+RB"), grids={}, base_params=FAST,
                            target_rate=None)
        for d in r.deltas():
            assert d["delta"] == pytest.approx(0.0, abs=1e-12)

    def test_skips_single_class_split(self, caplog):
        b = bundle()
        post = b.post_covid
        post = FeatureMatrix(post.company_ids, post.reference_years, post.window_lengths,
                             post.columns, post.values, np.zeros(len(post), dtype=int))
        b = SplitBundle(1, b.train, b.test, b.pre_covid, post, seed=0)
        r = ablation_matrix({1: b}, families=("logistic",), feature_sets=("FR",), grids={})
        assert r.splits == ["test", "pre_covid"]
        assert "lacks a class" in caplog.text


class TestDrift:
    def test_identical_splits_zero_deltas(self):
        r = ablation_matrix({1: bundle(same_eval=True)}, families=("logistic",),
                            feature_sets=("FR", "FR+RB"), grids={}, target_rate=None)
        drift = drift_report(r)
        assert len(drift) == 2
        for row in drift.rows:
            assert row.delta_pre == 0.0 and row.delta_post == 0.0
        h = drift.get("logistic", "FR+RB", 1)
        assert h.degrades_alone is False and h.larger_post_drop is False
        assert drift.get("logistic", "FR", 1).larger_post_drop is None

    def test_flags_from_planted_aucs(self):
        def cell(fs, split, a):
            return CellResult("gbdt", fs, 1, split, 0, a, 10, 2)
        rep = AblationReport((cell("FR", "test", 0.70), cell("FR", "pre_covid", 0.72),
                              cell("FR", "post_covid", 0.75), cell("FR+RB", "test", 0.80),
                              cell("FR+RB", "pre_covid", 0.81), cell("FR+RB", "post_covid", 0.78)))
        h = drift_report(rep).get("gbdt", "FR+RB", 1)
        assert h.delta_post == pytest.approx(-0.02)
        assert h.degrades_alone and h.larger_post_drop
        assert "true,true" in drift_report(rep).to_csv_text()


class TestEmit:
    def test_one_file_per_cell_split(self, tmp_path):
        r = ablation_matrix({1: bundle()}, families=("logistic",), feature_sets=("FR", "FR+RB"),
                            grids={}, target_rate=None)
        paths = emit_roc_csv(r, tmp_path / "roc")
        assert len(paths) == 2 * 3
        assert sorted(p.name for p in paths)[0] == "roc_logistic_FR+RB_1y_post_covid.csv"
        roc = RocCurve.from_csv_text(paths[0].read_text())
        assert roc.area() == pytest.approx(r.results[0].auc)

    def test_empty_report(self, tmp_path):
        assert emit_roc_csv(AblationReport(()), tmp_path) == []
