"""AdamW with decoupled weight decay, written as a pure function."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import ValidationError

__all__ = ["OptimizerState", "adamw_step"]


@dataclass(frozen=True)
class OptimizerState:
    m: tuple = ()
    v: tuple = ()
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], **hyper) -> "OptimizerState":
        zeros = tuple(np.zeros_like(np.asarray(p, dtype=np.float64)) for p in params)
        return cls(m=zeros, v=tuple(z.copy() for z in zeros), **hyper)


def adamw_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: OptimizerState,
               lr: float) -> tuple[list[np.ndarray], OptimizerState]:
    """One AdamW update; inputs are left untouched."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValidationError("params, grads and optimizer state disagree on the number of tensors")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        p = np.asarray(p, dtype=np.float64)
        g = np.asarray(g, dtype=np.float64)
        if p.shape != g.shape or p.shape != m.shape:
            raise ValidationError(f"shape mismatch: param {p.shape}, grad {g.shape}, state {m.shape}")
        p = p - lr * state.weight_decay * p
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        p = p - lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        new_params.append(p)
        new_m.append(m)
        new_v.append(v)
    return new_params, replace(state, m=tuple(new_m), v=tuple(new_v), t=t)
