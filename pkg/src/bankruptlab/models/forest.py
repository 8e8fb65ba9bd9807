"""Random forest of gini CART trees on binned features."""

from __future__ import annotations

import math

import numpy as np

from .trees import Binner, TreeBuilder, apply_tree, node_histograms, split_sides


def _best_gini_split(codes, y, rows, features, min_leaf):
    """Best ``(feature, threshold, missing_left, score)`` for a node, or ``None``.

    The score is the weighted sum of squared class proportions; maximising it
    is the same as minimising the children's weighted gini impurity.  Ties go
    to the lowest feature index, then the lowest threshold, then missing-right.
    """
    pos_h, cnt_h = node_histograms(codes, rows, features, [y])
    lp, rp, tp = split_sides(pos_h)
    lc, rc, tc = split_sides(cnt_h)
    ln, rn = lc - lp, rc - rp
    with np.errstate(divide="ignore", invalid="ignore"):
        score = (lp ** 2 + ln ** 2) / lc + (rp ** 2 + rn ** 2) / rc
    valid = (lc >= min_leaf) & (rc >= min_leaf)
    score = np.where(valid, score, -np.inf)
    flat = int(np.argmax(score))
    best = score.flat[flat]
    n = float(len(rows))
    npos = float(tp[0])
    parent = (npos ** 2 + (n - npos) ** 2) / n
    if not np.isfinite(best) or best <= parent + 1e-12 * n:
        return None
    f, t, d = np.unravel_index(flat, score.shape)
    return int(features[f]), int(t), bool(d), float(best)


def _grow_tree(codes, y, rows, rng, max_depth, min_leaf, n_sub):
    p = codes.shape[1]
    tb = TreeBuilder()
    root = tb.add_leaf(y[rows].mean())
    stack = [(root, rows, 0)]
    while stack:
        node, idx, depth = stack.pop()
        frac = y[idx].mean()
        if depth >= max_depth or len(idx) < 2 * min_leaf or frac in (0.0, 1.0):
            continue
        feats = np.sort(rng.choice(p, size=n_sub, replace=False))
        split = _best_gini_split(codes, y, idx, feats, min_leaf)
        if split is None:
            continue
        f, t, mleft, _ = split
        c = codes[idx, f]
        go = np.where(c == 255, mleft, c <= t)
        li, ri = idx[go], idx[~go]
        left, right = tb.split(node, f, t, mleft, y[li].mean(), y[ri].mean())
        stack.append((right, ri, depth + 1))
        stack.append((left, li, depth + 1))
    return tb.to_params()


def fit_forest_params(values: np.ndarray, y: np.ndarray, params: dict, seed: int) -> dict:
    binner = Binner.fit(values, int(params["n_bins"]))
    codes = binner.transform(values)
    n, p = codes.shape
    yf = y.astype(float)
    mf = params["max_features"]
    n_sub = min(p, math.ceil(math.sqrt(p)) if mf == "sqrt" else int(mf))
    trees = []
    for child in np.random.SeedSequence(seed).spawn(int(params["n_trees"])):
        rng = np.random.default_rng(child)
        rows = rng.integers(0, n, size=n) if params["bootstrap"] else np.arange(n)
        trees.append(_grow_tree(codes, yf, np.sort(rows), rng, int(params["max_depth"]),
                                int(params["min_leaf"]), n_sub))
    return {"edges": binner.to_params(), "trees": trees}


def predict_forest(params: dict, values: np.ndarray) -> np.ndarray:
    codes = Binner.from_params(params["edges"]).transform(values)
    total = np.zeros(len(values))
    for tree in params["trees"]:
        total += tree["value"][apply_tree(tree, codes)]
    return total / len(params["trees"])
