"""AdamW with decoupled weight decay, cosine annealing, and the patch/batch curriculum."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .config import ScheduleEntry
from .errors import ConfigError
from .params import ParamStore

ADAM_EPS = 1e-8


@dataclass
class OptState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params: ParamStore) -> "OptState":
        return cls({k: np.zeros_like(p.data) for k, p in params.items()},
                   {k: np.zeros_like(p.data) for k, p in params.items()}, 0)


def adamw_step(params: ParamStore, grads: Mapping[str, np.ndarray], state: OptState, lr: float,
               betas: tuple[float, float] = (0.9, 0.999), eps: float = ADAM_EPS,
               weight_decay: float = 0.0) -> None:
    """One in-place AdamW update.

    w <- w - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * w, with the decay
    term using the pre-update weights.
    """
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        update = lr * m_hat / (np.sqrt(v_hat) + eps) + (lr * weight_decay) * p.data
        p.data -= update.astype(p.dtype, copy=False)


def cosine_lr(t: int, total: int, lr_max: float = 3e-4, lr_min: float = 1e-6) -> float:
    """Single-cycle cosine decay from lr_max at t=0 to lr_min at t=total."""
    if t >= total:
        return lr_min
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t / total))


def progressive_schedule(it: int, schedule: Sequence[ScheduleEntry]) -> tuple[int, int]:
    """(patch_size, batch_size) of the last entry whose start_iter <= it."""
    if not schedule:
        raise ConfigError("empty progressive schedule")
    current = schedule[0]
    for entry in schedule:
        if entry.start_iter <= it:
            current = entry
        else:
            break
    return current.patch_size, current.batch_size
