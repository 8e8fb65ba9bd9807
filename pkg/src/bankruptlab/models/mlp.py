"""Two-hidden-layer perceptron with a learned projection of the behaviour block.

Architecture::

    rb  -> dense projection (embed_dim, linear) --+
    other standardised features ------------------+-> concat -> relu(h1) -> relu(h2) -> logit

Trained on binary cross-entropy with logits by mini-batch Adam.  When the
schema has no RB columns the projection is skipped.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .base import Standardizer

PARAM_ORDER = ("We", "be", "W1", "b1", "W2", "b2", "W3", "b3")


def init_params(n_dense: int, n_rb: int, hidden, embed_dim: int, rng) -> dict:
    h1, h2 = hidden
    p = {}
    width = n_dense
    if n_rb:
        p["We"] = rng.normal(0.0, np.sqrt(1.0 / n_rb), size=(n_rb, embed_dim))
        p["be"] = np.zeros(embed_dim)
        width += embed_dim
    p["W1"] = rng.normal(0.0, np.sqrt(2.0 / max(width, 1)), size=(width, h1))
    p["b1"] = np.zeros(h1)
    p["W2"] = rng.normal(0.0, np.sqrt(2.0 / h1), size=(h1, h2))
    p["b2"] = np.zeros(h2)
    p["W3"] = rng.normal(0.0, np.sqrt(1.0 / h2), size=(h2, 1))
    p["b3"] = np.zeros(1)
    return p


def forward(p: dict, x_dense: np.ndarray, x_rb: np.ndarray):
    """Logits and the activations needed for backpropagation."""
    parts = [x_dense]
    if "We" in p:
        parts.append(x_rb @ p["We"] + p["be"])
    z0 = np.hstack(parts)
    a1 = np.maximum(z0 @ p["W1"] + p["b1"], 0.0)
    a2 = np.maximum(a1 @ p["W2"] + p["b2"], 0.0)
    logits = (a2 @ p["W3"] + p["b3"]).ravel()
    return logits, (z0, a1, a2)


def bce_with_logits(logits: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.logaddexp(0.0, logits) - y * logits))


def loss_and_grads(p: dict, x_dense: np.ndarray, x_rb: np.ndarray, y: np.ndarray):
    logits, (z0, a1, a2) = forward(p, x_dense, x_rb)
    n = len(y)
    loss = bce_with_logits(logits, y)
    d_logit = ((expit(logits) - y) / n)[:, None]
    g = {"W3": a2.T @ d_logit, "b3": d_logit.sum(axis=0)}
    d_a2 = d_logit @ p["W3"].T * (a2 > 0)
    g["W2"] = a1.T @ d_a2
    g["b2"] = d_a2.sum(axis=0)
    d_a1 = d_a2 @ p["W2"].T * (a1 > 0)
    g["W1"] = z0.T @ d_a1
    g["b1"] = d_a1.sum(axis=0)
    if "We" in p:
        d_z0 = d_a1 @ p["W1"].T
        d_emb = d_z0[:, x_dense.shape[1]:]
        g["We"] = x_rb.T @ d_emb
        g["be"] = d_emb.sum(axis=0)
    return loss, g


def split_blocks(z: np.ndarray, rb_mask: np.ndarray):
    return z[:, ~rb_mask], z[:, rb_mask]


def fit_mlp_params(values: np.ndarray, y: np.ndarray, families, params: dict, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    prep = Standardizer.fit(values, float(params["clip_quantile"]))
    z = prep.transform(values)
    rb_mask = np.array([f == "RB" for f in families], dtype=bool)
    xd, xr = split_blocks(z, rb_mask)
    p = init_params(xd.shape[1], xr.shape[1], params["hidden"], int(params["embed_dim"]), rng)
    lr = float(params["learning_rate"])
    b1, b2, eps = 0.9, 0.999, 1e-8
    m = {k: np.zeros_like(v) for k, v in p.items()}
    v = {k: np.zeros_like(w) for k, w in p.items()}
    yf = y.astype(float)
    n = len(yf)
    bs = int(params["batch_size"])
    step = 0
    for _ in range(int(params["epochs"])):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            _, grads = loss_and_grads(p, xd[idx], xr[idx], yf[idx])
            step += 1
            for k in p:
                m[k] = b1 * m[k] + (1 - b1) * grads[k]
                v[k] = b2 * v[k] + (1 - b2) * grads[k] ** 2
                mhat = m[k] / (1 - b1 ** step)
                vhat = v[k] / (1 - b2 ** step)
                p[k] = p[k] - lr * mhat / (np.sqrt(vhat) + eps)
    return {"prep": prep.to_params(), "rb_mask": rb_mask, "weights": p}


def predict_mlp(params: dict, values: np.ndarray) -> np.ndarray:
    z = Standardizer.from_params(params["prep"]).transform(values)
    xd, xr = split_blocks(z, np.asarray(params["rb_mask"], dtype=bool))
    logits, _ = forward(params["weights"], xd, xr)
    return expit(logits)
