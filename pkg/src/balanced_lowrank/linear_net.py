"""Deep linear network used as the desk-scale model.

Layer 1 maps n inputs to d features and every later layer is d x d. A batch
``X`` (N x n) flows as ``H_l = H_{l-1} @ W_l.T``; the loss is
``||H_L - Y||_F^2 / (2N)``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import InvalidInput


def check_stack(weights: Sequence[np.ndarray]) -> list[np.ndarray]:
    if len(weights) == 0:
        raise InvalidInput("a layer stack needs at least one layer")
    out = [np.asarray(w, dtype=np.float64) for w in weights]
    for i, w in enumerate(out):
        if w.ndim != 2:
            raise InvalidInput(f"layer {i + 1} is not a matrix")
        if i and w.shape[1] != out[i - 1].shape[0]:
            raise InvalidInput(
                f"layer {i + 1} expects {w.shape[1]} inputs, layer {i} gives {out[i - 1].shape[0]}"
            )
    return out


def forward(weights: Sequence[np.ndarray], x: np.ndarray) -> np.ndarray:
    h = x
    for w in weights:
        h = h @ w.T
    return h


def loss_and_grads(weights: Sequence[np.ndarray], x: np.ndarray, y: np.ndarray):
    """Mean squared loss and its gradient with respect to every layer."""
    acts = [x]
    for w in weights:
        acts.append(acts[-1] @ w.T)
    n = x.shape[0]
    resid = acts[-1] - y
    loss = 0.5 * float(np.sum(resid**2)) / n
    delta = resid / n
    grads = [None] * len(weights)
    for i in range(len(weights) - 1, -1, -1):
        grads[i] = delta.T @ acts[i]
        if i:
            delta = delta @ weights[i]
    return loss, grads


def adapter_grads(grad_w: np.ndarray, s: float, u: np.ndarray, v: np.ndarray):
    """Chain rule through ``W = W_prev + s U V^T``; returns ``(dU, dV, ds)``."""
    return s * (grad_w @ v), s * (grad_w.T @ u), float(np.sum(grad_w * (u @ v.T)))


def factor_grads(grad_w: np.ndarray, b: np.ndarray, a: np.ndarray):
    """Chain rule through ``W = W_prev + B A``; returns ``(dB, dA)``."""
    return grad_w @ a.T, b.T @ grad_w


def random_stack(rng: np.random.Generator, n: int, d: int, n_layers: int) -> list[np.ndarray]:
    """Layers with orthonormal rows or columns, so the product stays well conditioned."""
    out = []
    fan_in = n
    for _ in range(n_layers):
        q, r = np.linalg.qr(rng.standard_normal((max(d, fan_in), min(d, fan_in))))
        q = q * np.where(np.diag(r) < 0, -1.0, 1.0)
        out.append(q if d >= fan_in else q.T)
        fan_in = d
    return out
