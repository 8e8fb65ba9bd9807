"""L2-regularised logistic regression fit by full-batch gradient descent."""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .base import Standardizer


def objective(w: np.ndarray, A: np.ndarray, y: np.ndarray, l2: float) -> float:
    """Mean log-loss plus ``l2/(2n)·||w||²`` (intercept ``w[0]`` unpenalised)."""
    z = A @ w
    n = len(y)
    return float(np.mean(np.logaddexp(0.0, z) - y * z) + l2 / (2 * n) * np.dot(w[1:], w[1:]))


def gradient(w: np.ndarray, A: np.ndarray, y: np.ndarray, l2: float) -> np.ndarray:
    n = len(y)
    g = A.T @ (expit(A @ w) - y) / n
    g[1:] += l2 / n * w[1:]
    return g


def gradient_descent(A: np.ndarray, y: np.ndarray, l2: float, tol: float, max_iter: int):
    """Fixed-step descent with step ``1/L``; returns ``(w, loss_history)``.

    ``L = ||A||_2² / (4n) + l2/n`` bounds the Hessian, so each step cannot
    increase the objective.  Stops when the gradient max-norm drops below
    ``tol``.
    """
    n = len(y)
    L = np.linalg.norm(A, 2) ** 2 / (4 * n) + l2 / n
    step = 1.0 / L if L > 0 else 1.0
    w = np.zeros(A.shape[1])
    history = [objective(w, A, y, l2)]
    for _ in range(int(max_iter)):
        g = gradient(w, A, y, l2)
        if np.max(np.abs(g)) < tol:
            break
        w = w - step * g
        history.append(objective(w, A, y, l2))
    return w, history


def design(z: np.ndarray) -> np.ndarray:
    return np.hstack([np.ones((len(z), 1)), z])


def fit_logistic_params(values: np.ndarray, y: np.ndarray, params: dict) -> dict:
    prep = Standardizer.fit(values, float(params["clip_quantile"]))
    A = design(prep.transform(values))
    w, history = gradient_descent(A, y.astype(float), float(params["l2"]),
                                  float(params["tol"]), int(params["max_iter"]))
    return {"prep": prep.to_params(), "intercept": float(w[0]), "coef": w[1:],
            "n_iter": len(history) - 1, "final_loss": history[-1]}


def predict_logistic(params: dict, values: np.ndarray) -> np.ndarray:
    z = Standardizer.from_params(params["prep"]).transform(values)
    return expit(params["intercept"] + z @ np.asarray(params["coef"], dtype=float))
