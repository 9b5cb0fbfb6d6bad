"""Adam, as a pure function over dicts of parameter arrays."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from ..errors import ContractError


@dataclass(frozen=True)
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: Mapping[str, np.ndarray], lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    if lr < 0:
        raise ContractError(f"learning rate must be >= 0, got {lr}")
    if not (0 < beta1 < 1 and 0 < beta2 < 1) or eps <= 0:
        raise ContractError("Adam requires 0 < beta1, beta2 < 1 and eps > 0")
    zeros = {k: np.zeros_like(np.asarray(v, dtype=np.float64)) for k, v in params.items()}
    return AdamState(m=zeros, v={k: z.copy() for k, z in zeros.items()}, lr=lr,
                     beta1=beta1, beta2=beta2, eps=eps)


def adam_step(state: AdamState, params: Mapping[str, np.ndarray],
              grads: Mapping[str, np.ndarray]) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected adaptive-moment *descent* step.

    Returns new parameter arrays and the advanced state; inputs are not modified.
    """
    if set(params) != set(grads) or set(params) != set(state.m):
        raise ContractError("params, grads and optimizer state must share keys")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        if g.shape != np.shape(p) or g.shape != state.m[k].shape:
            raise ContractError(f"shape mismatch for '{k}': param {np.shape(p)}, grad {g.shape}")
        m = b1 * state.m[k] + (1 - b1) * g
        v = b2 * state.v[k] + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_p[k] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[k], new_v[k] = m, v
    return new_p, replace(state, m=new_m, v=new_v, step=t)


optimizer_step = adam_step
