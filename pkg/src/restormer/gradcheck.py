"""Central finite-difference gradient checker (always 64-bit)."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tape, Tensor


def analytic_grad(f: Callable[[Tensor], Tensor], x: np.ndarray) -> np.ndarray:
    xt = Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)
    with Tape() as tape:
        loss = f(xt)
    tape.backward(loss, leaves=[xt])
    return xt.grad


def numeric_grad(f: Callable[[Tensor], Tensor], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    out = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(Tensor(x)).item()
        flat[i] = orig - eps
        fm = f(Tensor(x)).item()
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * eps)
    return out.reshape(x.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> float:
    """Max relative error between backprop and central differences of scalar ``f`` at ``x``."""
    x = np.asarray(x, dtype=np.float64)
    return relative_error(analytic_grad(f, x), numeric_grad(f, x, eps))
