"""AdamW, global-norm clipping and the warmup/cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

BETAS = (0.9, 0.999)
EPS = 1e-8


@dataclass
class AdamWState:
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    step: int = 0

    @classmethod
    def for_params(cls, params: list[Tensor]) -> "AdamWState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def decays(param: Tensor) -> bool:
    """Weight decay applies to every trainable except embedding tables."""
    return not (param.name or "").endswith("embed")


def adamw_step(params: list[Tensor], grads: list[np.ndarray], state: AdamWState,
               lr: float, weight_decay: float) -> None:
    state.step += 1
    t = state.step
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient at optimizer step {t}")
    b1, b2 = BETAS
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if weight_decay and decays(p):
            p.data *= 1.0 - lr * weight_decay
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + EPS)


def clip_grad_norm(grads: list[np.ndarray], max_norm: float = 1.0) -> tuple[list[np.ndarray], float]:
    """Rescale so the global L2 norm is at most ``max_norm``; returns (grads, pre-clip norm)."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total <= max_norm:
        return grads, total
    scale = max_norm / total
    return [g * scale for g in grads], total


def lr_schedule(step: int, steps: int, lr: float, min_lr: float, warmup_steps: int) -> float:
    """Linear ramp min_lr -> lr over the warmup, then cosine decay back to min_lr."""
    if step < warmup_steps:
        return min_lr + (lr - min_lr) * step / warmup_steps
    span = steps - 1 - warmup_steps
    if span <= 0:
        return lr
    progress = min((step - warmup_steps) / span, 1.0)
    return min_lr + 0.5 * (lr - min_lr) * (1.0 + math.cos(math.pi * progress))
