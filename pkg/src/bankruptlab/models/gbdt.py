"""Histogram gradient boosting with logistic loss and leaf-wise tree growth."""

from __future__ import annotations

import heapq

import numpy as np
from scipy.special import expit

from .trees import Binner, TreeBuilder, apply_tree, node_histograms, split_sides


def split_gains(g_hist, h_hist, c_hist, reg_lambda=0.0, min_child_samples=1,
                min_child_weight=0.0):
    """Gain of every candidate split of one node.

    ``gain = G_L^2/(H_L+l) + G_R^2/(H_R+l) - G^2/(H+l)``; invalid candidates
    are ``-inf``.  Shape ``(p, 255, 2)``, last axis = missing right / left.
    """
    gl, gr, gt = split_sides(g_hist)
    hl, hr, ht = split_sides(h_hist)
    cl, cr, _ = split_sides(c_hist)
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = (gl ** 2 / (hl + reg_lambda) + gr ** 2 / (hr + reg_lambda)
                - (gt ** 2 / (ht + reg_lambda))[:, None, None])
    valid = ((cl >= min_child_samples) & (cr >= min_child_samples)
             & (hl >= min_child_weight) & (hr >= min_child_weight))
    return np.where(valid & np.isfinite(gain), gain, -np.inf)


class _Node:
    __slots__ = ("id", "rows", "hists", "depth", "split")

    def __init__(self, node_id, rows, hists, depth):
        self.id, self.rows, self.hists, self.depth = node_id, rows, hists, depth
        self.split = None


def _find_split(node, params):
    gain = split_gains(*node.hists, reg_lambda=params["reg_lambda"],
                       min_child_samples=int(params["min_child_samples"]),
                       min_child_weight=params["min_child_weight"])
    flat = int(np.argmax(gain))
    best = gain.flat[flat]
    if not np.isfinite(best) or best <= 1e-12:
        node.split = None
        return
    f, t, d = np.unravel_index(flat, gain.shape)
    node.split = (float(best), int(f), int(t), bool(d))


def _leaf_value(g_sum, h_sum, reg_lambda):
    return -g_sum / (h_sum + reg_lambda) if h_sum + reg_lambda > 0 else 0.0


def grow_tree(codes, grad, hess, params, all_features=None):
    """One leaf-wise regression tree on gradient statistics.

    Leaves are split in order of decreasing gain (ties: lower node id) until
    ``max_leaves`` is reached or no split has positive gain.  Returns the
    tree and the leaf index of every training row.
    """
    n, p = codes.shape
    feats = np.arange(p) if all_features is None else all_features
    lam = params["reg_lambda"]
    max_depth = int(params["max_depth"])
    tb = TreeBuilder()
    rows = np.arange(n)
    root = _Node(tb.add_leaf(_leaf_value(grad.sum(), hess.sum(), lam)), rows,
                 node_histograms(codes, rows, feats, [grad, hess]), 0)
    _find_split(root, params)
    heap = []
    if root.split:
        heapq.heappush(heap, (-root.split[0], root.id, root))
    leaf_of = np.zeros(n, dtype=np.int64)
    n_leaves = 1
    while heap and n_leaves < int(params["max_leaves"]):
        _, _, node = heapq.heappop(heap)
        _, f, t, mleft = node.split
        c = codes[node.rows, f]
        go = np.where(c == 255, mleft, c <= t)
        li, ri = node.rows[go], node.rows[~go]
        gl, gr = grad[li].sum(), grad[ri].sum()
        hl, hr = hess[li].sum(), hess[ri].sum()
        lid, rid = tb.split(node.id, int(feats[f]), t, mleft,
                            _leaf_value(gl, hl, lam), _leaf_value(gr, hr, lam))
        n_leaves += 1
        # histogram subtraction: build the smaller child, derive the other
        small, large = (li, ri) if len(li) <= len(ri) else (ri, li)
        small_h = node_histograms(codes, small, feats, [grad, hess])
        large_h = [a - b for a, b in zip(node.hists, small_h)]
        lh, rh = (small_h, large_h) if small is li else (large_h, small_h)
        node.hists = None
        for cid, crow, ch in ((lid, li, lh), (rid, ri, rh)):
            leaf_of[crow] = cid
            child = _Node(cid, crow, ch, node.depth + 1)
            if max_depth > 0 and child.depth >= max_depth:
                continue
            _find_split(child, params)
            if child.split:
                heapq.heappush(heap, (-child.split[0], child.id, child))
    return tb.to_params(), leaf_of


def fit_gbdt_params(values: np.ndarray, y: np.ndarray, params: dict, seed: int) -> dict:
    binner = Binner.fit(values, int(params["n_bins"]))
    codes = binner.transform(values)
    yf = y.astype(float)
    base_rate = float(yf.mean())
    init = float(np.log(base_rate) - np.log1p(-base_rate))
    raw = np.full(len(yf), init)
    lr = float(params["learning_rate"])
    trees = []
    for _ in range(int(params["n_rounds"])):
        prob = expit(raw)
        grad = prob - yf
        hess = prob * (1.0 - prob)
        tree, leaf_of = grow_tree(codes, grad, hess, params)
        tree["value"] = tree["value"] * lr
        raw += tree["value"][leaf_of]
        trees.append(tree)
    return {"edges": binner.to_params(), "init_score": init, "base_rate": base_rate,
            "trees": trees}


def raw_scores(params: dict, values: np.ndarray) -> np.ndarray:
    raw = np.full(len(values), float(params["init_score"]))
    if params["trees"]:
        codes = Binner.from_params(params["edges"]).transform(values)
        for tree in params["trees"]:
            raw += tree["value"][apply_tree(tree, codes)]
    return raw


def predict_gbdt(params: dict, values: np.ndarray) -> np.ndarray:
    if not params["trees"]:
        # exact prior, not a round trip through the log-odds
        return np.full(len(values), float(params["base_rate"]))
    return expit(raw_scores(params, values))
