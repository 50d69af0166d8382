"""AdamW with decoupled weight decay, and the warmup + cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .autodiff import Tensor
from .errors import ShapeMismatchError


@dataclass(frozen=True)
class ScheduleSpec:
    base_lr: float = 4e-4
    warmup_epochs: int = 40
    total_epochs: int = 440
    min_lr: float = 0.0

    def __post_init__(self):
        if not 0 < self.warmup_epochs < self.total_epochs:
            raise ValueError(f"need 0 < warmup_epochs ({self.warmup_epochs}) < total_epochs ({self.total_epochs})")
        if self.base_lr <= 0 or self.min_lr < 0 or self.min_lr > self.base_lr:
            raise ValueError(f"need 0 <= min_lr <= base_lr, base_lr > 0 (got {self.min_lr}, {self.base_lr})")


def lr_at(epoch: float, spec: ScheduleSpec = ScheduleSpec()) -> float:
    """Linear warmup from ``base_lr / warmup`` to ``base_lr``, then cosine down to ``min_lr``."""
    if not 0 <= epoch <= spec.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {spec.total_epochs}]")
    w = spec.warmup_epochs
    if epoch <= w:
        start = spec.base_lr / w
        return start + (spec.base_lr - start) * epoch / w
    progress = (epoch - w) / (spec.total_epochs - w)
    return spec.min_lr + 0.5 * (spec.base_lr - spec.min_lr) * (1.0 + math.cos(math.pi * progress))


@dataclass
class OptimState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    base_lr: float = 4e-4
    # per-parameter switch for weight decay; None decays everything
    decay: Optional[list[bool]] = field(default=None)

    @classmethod
    def for_params(cls, params: Sequence[Tensor], decay: Optional[Sequence[bool]] = None, **hyper) -> "OptimState":
        return cls(m=[np.zeros_like(p.data) for p in params], v=[np.zeros_like(p.data) for p in params],
                   decay=None if decay is None else list(decay), **hyper)

    def hyperparams(self) -> dict:
        return {"t": self.t, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "weight_decay": self.weight_decay, "base_lr": self.base_lr, "decay": self.decay}


def decay_mask(params: Sequence[Tensor]) -> list[bool]:
    """Weight decay for conv and linear weights only; norms and biases are 1-d."""
    return [p.ndim >= 2 for p in params]


def adamw_step(params: Sequence[Tensor], grads: Sequence[Optional[np.ndarray]], state: OptimState,
               lr: float) -> None:
    """One in-place AdamW update of ``params``; ``state`` advances by one step."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatchError(f"{len(params)} params, {len(grads)} grads, {len(state.m)} moment slots")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape or state.m[i].shape != p.shape:
            raise ShapeMismatchError(f"param {i}: shape {p.shape}, grad {g.shape}, moment {state.m[i].shape}")
        m, v = state.m[i], state.v[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.weight_decay and (state.decay is None or state.decay[i]):
            p.data *= 1.0 - lr * state.weight_decay
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.data.dtype)
