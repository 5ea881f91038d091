from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    learning_rate: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update. Inputs are left untouched."""
    if state.step < 0:
        raise ValueError(f"Adam timestep must be >= 0, got {state.step}")
    t = state.step + 1
    new_params, new_m, new_v = {}, {}, {}
    corr1 = 1.0 - beta1**t
    corr2 = 1.0 - beta2**t
    for name, p in params.items():
        g = grads[name]
        m = beta1 * state.m.get(name, 0.0) + (1.0 - beta1) * g
        v = beta2 * state.v.get(name, 0.0) + (1.0 - beta2) * g * g
        new_params[name] = p - learning_rate * (m / corr1) / (np.sqrt(v / corr2) + eps)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(t, new_m, new_v)
