"""Adam with decoupled weight decay and a warmup / inverse-square-root schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor


@dataclass(frozen=True)
class Schedule:
    base_lr: float
    warmup_steps: int

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")
        if self.warmup_steps < 1:
            raise ValueError(f"warmup_steps must be >= 1, got {self.warmup_steps}")


def lr_at(schedule: Schedule, step: int) -> float:
    """Linear warmup to ``base_lr`` at ``warmup_steps``, then ``1/sqrt(step)`` decay."""
    if step < 1:
        raise ValueError(f"step must be >= 1, got {step}")
    w = schedule.warmup_steps
    return schedule.base_lr * min(step / w, math.sqrt(w / step))


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def decays(name: str) -> bool:
    """Weight decay applies to weight matrices only (``*.w*``), not biases or norm gains."""
    return name.rsplit(".", 1)[-1].startswith("w")


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray | None],
    state: AdamState,
    schedule: Schedule,
    weight_decay: float = 0.01,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    decay_filter: Callable[[str], bool] = decays,
) -> float:
    """Apply one in-place Adam update and return the learning rate used.

    Parameters whose gradient is None are left untouched (their moments
    are not advanced either).
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    step = state.step + 1
    lr = lr_at(schedule, step)
    b1, b2 = betas
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step
    for name in sorted(params):
        g = grads.get(name)
        if g is None:
            continue
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[name], state.v[name] = m, v
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        if weight_decay and decay_filter(name):
            update = update + weight_decay * p.data
        p.data = p.data - lr * update
    state.step = step
    return lr
