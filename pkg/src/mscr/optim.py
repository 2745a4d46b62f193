"""AdamW with decoupled weight decay, and the single-cycle cosine schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .autodiff import ContractError, Tensor


@dataclass
class AdamWState:
    """Per-parameter first/second moment buffers plus the shared step count.

    Weight decay is decoupled: parameters shrink by lr * weight_decay
    before the gradient-based update, so the decay never enters the
    moment estimates.
    """

    lr: float = 1e-4
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def _ensure(self, params: Sequence[Tensor]) -> None:
        if not self.m:
            self.m = [np.zeros_like(p.data) for p in params]
            self.v = [np.zeros_like(p.data) for p in params]
        elif len(self.m) != len(params):
            raise ContractError(
                f"optimizer state holds {len(self.m)} buffers, got {len(params)} params"
            )


def adamw_step(
    params: Sequence[Tensor],
    state: AdamWState,
    lr: Optional[float] = None,
) -> None:
    """One update using each parameter's .grad; buffers update in place."""
    state._ensure(params)
    if lr is None:
        lr = state.lr
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        if g is None:
            raise ContractError("adamw_step before backward: a parameter has no grad")
        if state.weight_decay != 0.0:
            p.data *= 1.0 - lr * state.weight_decay
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p.data -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    """Single-cycle cosine decay from lr0 at step 0 to 0 at total_steps."""
    if total_steps <= 0:
        raise ContractError(f"total_steps must be positive, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise ContractError(f"step {step} outside [0, {total_steps}]")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))
