"""AdaMax (the infinity-norm variant of Adam)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EPS = 1e-8


@dataclass
class AdamaxState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    u: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros(cls, params: dict[str, np.ndarray]) -> "AdamaxState":
        return cls(
            {k: np.zeros_like(v) for k, v in params.items()},
            {k: np.zeros_like(v) for k, v in params.items()},
        )


def adamax_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamaxState,
    lr: float = 0.002,
    beta1: float = 0.9,
    beta2: float = 0.999,
    t: int | None = None,
) -> None:
    """One in-place update. ``t`` defaults to ``state.t + 1`` and is stored back."""
    t = state.t + 1 if t is None else t
    if t < 1:
        raise ValueError("t must be >= 1")
    step = lr / (1.0 - beta1**t)
    for name, theta in params.items():
        g = grads[name]
        m = state.m[name]
        u = state.u[name]
        m *= beta1
        m += (1.0 - beta1) * g
        np.maximum(beta2 * u, np.abs(g), out=u)
        theta -= step * m / (u + EPS)
    state.t = t
