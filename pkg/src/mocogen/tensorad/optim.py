"""AdamW with global-norm clipping and a linear-warmup learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import NonFiniteError, ShapeError, Tensor


@dataclass
class AdamWConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 3e-2
    max_grad_norm: float | None = 0.5
    warmup_steps: int = 100


@dataclass
class OptimizerState:
    config: AdamWConfig
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    step: int = 0

    @classmethod
    def create(cls, params: Sequence[Tensor], config: AdamWConfig | None = None) -> "OptimizerState":
        return cls(
            config=config or AdamWConfig(),
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
        )

    def lr_at(self, step: int) -> float:
        """Learning rate for the 1-based optimizer step ``step``."""
        c = self.config
        if c.warmup_steps <= 0:
            return c.lr
        return c.lr * min(1.0, step / c.warmup_steps)


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_grads(grads: Sequence[np.ndarray], max_norm: float | None) -> tuple[list[np.ndarray], float]:
    norm = global_norm(grads)
    if max_norm is None or norm <= max_norm:
        return [np.asarray(g) for g in grads], norm
    s = max_norm / norm
    return [g * s for g in grads], norm


def clip_and_step(
    state: OptimizerState,
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray] | None = None,
    lr: float | None = None,
) -> float:
    """One clipped AdamW update in place. Returns the pre-clip gradient norm.

    Raises :class:`NonFiniteError` (leaving parameters, moments and the step
    counter untouched) if any gradient is NaN/Inf.
    """
    if grads is None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    if len(grads) != len(params) or len(params) != len(state.m):
        raise ShapeError("parameter, gradient and moment counts differ")
    for p, g, m in zip(params, grads, state.m):
        if np.shape(g) != p.shape or m.shape != p.shape:
            raise ShapeError(f"gradient shape {np.shape(g)} does not match parameter {p.shape}")
    for g in grads:
        if not np.isfinite(g).all():
            raise NonFiniteError("clip_and_step", "gradient rejected")
    c = state.config
    clipped, norm = clip_grads(grads, c.max_grad_norm)
    t = state.step + 1
    rate = state.lr_at(t) if lr is None else lr
    bc1 = 1.0 - c.beta1**t
    bc2 = 1.0 - c.beta2**t
    for i, (p, g) in enumerate(zip(params, clipped)):
        state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g
        state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g * g
        mhat = state.m[i] / bc1
        vhat = state.v[i] / bc2
        p.data = p.data * (1.0 - rate * c.weight_decay) - rate * mhat / (np.sqrt(vhat) + c.eps)
    state.step = t
    return norm
