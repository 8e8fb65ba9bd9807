import json

import numpy as np
import pytest
from scipy.special import expit

from bankruptlab.evaluation import auc
from bankruptlab.features import FeatureMatrix
from bankruptlab.models import (ConfigError, DegenerateFoldError, ModelConfig, SchemaError,
                                fit_gbdt, fit_logistic, fit_mlp, fit_model, fit_random_forest,
                                grid_search_cv, load_model, save_model, stratified_folds)
from bankruptlab.models.base import TrainedModel
from bankruptlab.models.gbdt import split_gains
from bankruptlab.models.logistic import design, gradient_descent
from bankruptlab.models.mlp import forward, init_params, loss_and_grads
from bankruptlab.models.search import grid_cells
from bankruptlab.models.trees import Binner, node_histograms

SMALL = {
    "logistic": {},
    "random_forest": {"n_trees": 15, "max_depth": 5, "min_leaf": 3},
    "gbdt": {"n_rounds": 25, "max_leaves": 7, "learning_rate": 0.2, "min_child_samples": 5},
    "mlp": {"hidden": [8, 4], "embed_dim": 3, "epochs": 10, "learning_rate": 1e-2},
}


def planted(n=600, p=4, seed=0, missing=0.0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    y = (rng.random(n) < expit(2.0 * X[:, 0] - 1.0)).astype(int)
    if missing:
        X[rng.random(X.shape) < missing] = np.nan
    return X, y


def small(family, seed=0, **extra):
    return ModelConfig(family, {**SMALL[family], **extra}, seed)


class TestConfig:
    def test_defaults_filled(self):
        assert ModelConfig("gbdt").params["n_rounds"] == 200

    def test_unknown_family(self):
        with pytest.raises(ConfigError):
            ModelConfig("svm")

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            ModelConfig("logistic", {"depth": 3})

    @pytest.mark.parametrize("family,params", [
        ("random_forest", {"n_trees": 0}), ("gbdt", {"learning_rate": 0.0}),
        ("gbdt", {"max_leaves": 1}), ("logistic", {"l2": -1.0}), ("mlp", {"hidden": [4]}),
        ("gbdt", {"n_bins": 256})])
    def test_out_of_range(self, family, params):
        with pytest.raises(ConfigError):
            ModelConfig(family, params)

    def test_single_class_labels_rejected(self):
        X, _ = planted(50)
        with pytest.raises(ValueError):
            fit_logistic(X, np.zeros(50, dtype=int))

    def test_nonfinite_rejected(self):
        X, y = planted(50)
        X[0, 0] = np.inf
        with pytest.raises(ValueError):
            fit_logistic(X, y)


class TestLogistic:
    def test_separable_ranks_perfectly(self):
        X = np.array([[-3.0], [-2.0], [-1.0], [1.0], [2.0], [3.0]])
        y = np.array([0, 0, 0, 1, 1, 1])
        m = fit_logistic(X, y, cfg=ModelConfig("logistic", {"l2": 1.0, "clip_quantile": 0.0}))
        s = m.predict_proba(X)
        assert s[3:].min() > s[:3].max()
        assert auc(s, y) == 1.0
        assert np.isfinite(m.params["coef"]).all()

    def test_loss_never_increases(self):
        X, y = planted(400)
        A = design((X - X.mean(0)) / X.std(0))
        _, hist = gradient_descent(A, y.astype(float), 1.0, 1e-10, 300)
        assert np.all(np.diff(hist) <= 1e-12)

    def test_matches_newton_optimum(self):
        X, y = planted(400)
        A = design((X - X.mean(0)) / X.std(0))
        yf = y.astype(float)
        w, _ = gradient_descent(A, yf, 1.0, 1e-10, 20000)
        # oracle: Newton iterations on the same penalised objective
        v = np.zeros(A.shape[1])
        R = np.eye(len(v)) / len(y)
        R[0, 0] = 0.0
        for _ in range(30):
            p = expit(A @ v)
            g = A.T @ (p - yf) / len(y) + R @ v
            H = (A * (p * (1 - p))[:, None]).T @ A / len(y) + R
            v = v - np.linalg.solve(H, g)
        np.testing.assert_allclose(w, v, atol=1e-6)


class TestRandomForest:
    def test_stump_finds_threshold(self):
        x = np.linspace(0, 1, 101)[:, None]
        y = (x[:, 0] > 0.37).astype(int)
        cfg = ModelConfig("random_forest", {"n_trees": 1, "max_depth": 1, "min_leaf": 1,
                                            "bootstrap": False, "max_features": 1})
        s = fit_random_forest(x, y, cfg=cfg).predict_proba(x)
        np.testing.assert_array_equal(s, y.astype(float))

    def test_seed_determinism(self):
        X, y = planted()
        a = fit_random_forest(X, y, cfg=small("random_forest"), seed=4).predict_proba(X)
        b = fit_random_forest(X, y, cfg=small("random_forest"), seed=4).predict_proba(X)
        c = fit_random_forest(X, y, cfg=small("random_forest"), seed=5).predict_proba(X)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)


class TestGbdt:
    def test_zero_rounds_is_base_rate(self):
        X, y = planted(333)
        s = fit_gbdt(X, y, cfg=ModelConfig("gbdt", {"n_rounds": 0})).predict_proba(X[:7])
        assert (s == y.mean()).all()

    def test_monotone_signal(self):
        X, y = planted(1000)
        Xt, yt = planted(1000, seed=1)
        m = fit_gbdt(X, y, cfg=small("gbdt"))
        rng = np.random.default_rng(2)
        x = rng.normal(size=(1000, 1))
        yy = (x[:, 0] > 0).astype(int)
        m2 = fit_gbdt(x, yy, cfg=small("gbdt"))
        assert auc(m2.predict_proba(x), yy) >= 0.95
        assert auc(m.predict_proba(Xt), yt) > 0.7

    def test_histogram_gain_matches_exact(self):
        rng = np.random.default_rng(3)
        X = rng.integers(0, 6, size=(80, 2)).astype(float)
        X[rng.random(X.shape) < 0.1] = np.nan
        g, h = rng.normal(size=80), rng.random(80) + 0.1
        codes = Binner.fit(X, 255).transform(X)
        hists = node_histograms(codes, np.arange(80), np.arange(2), [g, h])
        gain = split_gains(*hists, reg_lambda=0.5)
        lam = 0.5
        for f in range(2):
            col = X[:, f]
            for t, thr in enumerate(np.unique(col[~np.isnan(col)])[:-1]):
                for d in (0, 1):
                    left = np.where(np.isnan(col), bool(d), col <= thr)
                    gl, hl, gr, hr = g[left].sum(), h[left].sum(), g[~left].sum(), h[~left].sum()
                    exact = gl**2 / (hl + lam) + gr**2 / (hr + lam) - g.sum()**2 / (h.sum() + lam)
                    assert gain[f, t, d] == pytest.approx(exact, rel=1e-9, abs=1e-12)

    def test_missing_values_accepted(self):
        X, y = planted(500, missing=0.2)
        s = fit_gbdt(X, y, cfg=small("gbdt")).predict_proba(X)
        assert np.isfinite(s).all()


class TestMlp:
    def test_zero_weights_give_half(self):
        p = init_params(3, 2, (4, 3), 2, np.random.default_rng(0))
        p = {k: np.zeros_like(v) for k, v in p.items()}
        logits, _ = forward(p, np.ones((5, 3)), np.ones((5, 2)))
        np.testing.assert_array_equal(expit(logits), 0.5)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(1)
        p = init_params(3, 2, (5, 4), 2, rng)
        for k in p:
            p[k] = p[k] + rng.normal(0, 0.1, size=p[k].shape)
        xd, xr = rng.normal(size=(12, 3)), rng.normal(size=(12, 2))
        y = (rng.random(12) < 0.4).astype(float)
        _, grads = loss_and_grads(p, xd, xr, y)
        eps = 1e-6
        for k, w in p.items():
            num = np.zeros_like(w)
            for idx in np.ndindex(w.shape):
                orig = w[idx]
                w[idx] = orig + eps
                up, _ = loss_and_grads(p, xd, xr, y)
                w[idx] = orig - eps
                down, _ = loss_and_grads(p, xd, xr, y)
                w[idx] = orig
                num[idx] = (up - down) / (2 * eps)
            err = np.linalg.norm(num - grads[k]) / max(np.linalg.norm(num) + np.linalg.norm(grads[k]), 1e-12)
            assert err <= 1e-4, k

    def test_without_rb_columns_has_no_projection(self):
        X, y = planted(200)
        m = fit_mlp(X, y, cfg=small("mlp"))
        assert "We" not in m.params["weights"]

    def test_rb_block_projected(self):
        X, y = planted(200)
        names = ["fr_a", "fr_b", "rb_c", "rb_d"]
        m = fit_mlp(X, y, cfg=small("mlp"), feature_names=names)
        assert m.params["weights"]["We"].shape == (2, 3)
        assert np.isfinite(m.predict_proba(X, names)).all()


@pytest.mark.parametrize("family", list(SMALL))
class TestScoringContract:
    def fitted(self, family):
        X, y = planted(300, missing=0.05)
        names = ["fr_a", "fr_b", "rb_c", "rb_d"]
        return fit_model(small(family), X, y, feature_names=names), X, names

    def test_range_and_empty(self, family):
        m, X, names = self.fitted(family)
        s = m.predict_proba(X, names)
        assert ((s >= 0) & (s <= 1)).all()
        assert m.predict_proba(np.empty((0, 4)), names).shape == (0,)

    def test_row_permutation_equivariant(self, family):
        m, X, names = self.fitted(family)
        perm = np.random.default_rng(0).permutation(len(X))
        np.testing.assert_array_equal(m.predict_proba(X[perm], names),
                                      m.predict_proba(X, names)[perm])

    def test_column_permutation_reordered(self, family):
        m, X, names = self.fitted(family)
        order = [2, 0, 3, 1]
        np.testing.assert_array_equal(m.predict_proba(X[:, order], [names[i] for i in order]),
                                      m.predict_proba(X, names))

    def test_schema_mismatch(self, family):
        m, X, names = self.fitted(family)
        with pytest.raises(SchemaError, match="rb_d"):
            m.predict_proba(X[:, :3], names[:3])
        with pytest.raises(SchemaError, match="fr_z"):
            m.predict_proba(X, names[:3] + ["fr_z"])

    def test_serialisation_round_trip(self, family, tmp_path):
        m, X, names = self.fitted(family)
        path = tmp_path / "m.json"
        save_model(m, path)
        back = load_model(path)
        np.testing.assert_array_equal(back.predict_proba(X, names), m.predict_proba(X, names))
        assert back.to_json() == m.to_json()
        assert json.loads(path.read_text())["schema"]["feature_names"] == names

    def test_same_seed_same_scores(self, family):
        a, X, names = self.fitted(family)
        b, _, _ = self.fitted(family)
        np.testing.assert_array_equal(a.predict_proba(X, names), b.predict_proba(X, names))


@pytest.mark.parametrize("family", ["random_forest", "gbdt"])
def test_tree_scores_invariant_to_monotone_transform(family):
    X, y = planted(400)
    a = fit_model(small(family), X, y).predict_proba(X)
    b = fit_model(small(family), 2 * X + 1, y).predict_proba(2 * X + 1)
    np.testing.assert_array_equal(a, b)


def test_feature_matrix_input_uses_its_labels():
    X, y = planted(120)
    fm = FeatureMatrix(np.array([f"C{i}" for i in range(120)]), np.full(120, 2015),
                       np.ones(120, dtype=int), ("fr_a", "fr_b", "fr_c", "fr_d"), X, y)
    m = fit_logistic(fm)
    assert m.metadata["n_positives"] == int(y.sum())
    np.testing.assert_array_equal(m.predict_proba(fm), m.predict_proba(X))


class TestSearch:
    def test_folds_stratified(self):
        y = np.array([0] * 50 + [1] * 12)
        f = stratified_folds(y, 5, seed=1)
        for k in range(5):
            assert y[f == k].sum() in (2, 3)
            assert (f == k).sum() in (12, 13)

    def test_degenerate_folds(self):
        X, _ = planted(40)
        y = np.zeros(40, dtype=int)
        y[:3] = 1
        with pytest.raises(DegenerateFoldError):
            grid_search_cv("logistic", {"l2": [0.1, 1.0]}, X, y, folds=5)

    def test_cells_lexicographic(self):
        cells = grid_cells({"b": [2, 1], "a": ["x", "y"]})
        assert cells == [{"a": "x", "b": 2}, {"a": "x", "b": 1},
                         {"a": "y", "b": 2}, {"a": "y", "b": 1}]

    def test_singleton_returned_without_fitting(self):
        X, y = planted(20)
        y[:] = 0  # would fail any fit
        cfg, scores = grid_search_cv("gbdt", {"max_leaves": [5]}, X, y)
        assert cfg.params["max_leaves"] == 5
        assert len(scores) == 1 and np.isnan(scores[0][1])

    def test_planted_signal_prefers_capacity(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(600, 2))
        y = ((X[:, 0] * X[:, 1]) > 0).astype(int)
        cfg, scores = grid_search_cv("gbdt", {"max_leaves": [2, 8]}, X, y, folds=3,
                                     base_params={"n_rounds": 1, "learning_rate": 1.0,
                                                  "min_child_samples": 5})
        assert cfg.params["max_leaves"] == 8
        assert scores[1][1] > scores[0][1]

    def test_ties_go_to_first_cell(self):
        X, y = planted(200)
        cfg, scores = grid_search_cv("gbdt", {"reg_lambda": [0.0, 0.0]}, X, y, folds=3,
                                     base_params={"n_rounds": 3})
        assert scores[0][1] == scores[1][1]
        assert cfg.params["reg_lambda"] == 0.0

    def test_deterministic(self):
        X, y = planted(300)
        a = grid_search_cv("logistic", {"l2": [0.01, 100.0]}, X, y, folds=3, seed=2)
        b = grid_search_cv("logistic", {"l2": [0.01, 100.0]}, X, y, folds=3, seed=2)
        assert a == b
