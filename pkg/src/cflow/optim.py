"""Adam with bias correction, on plain arrays (the training loop owns the
mapping between parameter tensors and these flat lists)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError


@dataclass
class AdamState:
    m: list
    v: list

    @staticmethod
    def zeros_like(params) -> "AdamState":
        return AdamState([np.zeros_like(p) for p in params],
                         [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8, t: int = 1):
    """One bias-corrected update; returns (new_params, new_state).

    t is the 1-based step count used for bias correction.
    """
    if t < 1:
        raise ValueError(f"step count t must be >= 1, got {t}")
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ShapeError("params, grads and state must have the same length")
    new_params, new_m, new_v = [], [], []
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if not (p.shape == g.shape == m.shape == v.shape):
            raise ShapeError(f"shape mismatch: {p.shape}, {g.shape}, "
                             f"{m.shape}, {v.shape}")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        new_params.append(p - lr * (m / bc1) / (np.sqrt(v / bc2) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(new_m, new_v)
