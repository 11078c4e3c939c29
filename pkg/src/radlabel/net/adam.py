"""Adaptive-moment optimizer over named parameter blocks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NumericalError
from .params import ModelParams


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def init_like(cls, params: ModelParams) -> "AdamState":
        arrays = params.arrays()
        return cls(
            m={name: np.zeros_like(a) for name, a in arrays.items()},
            v={name: np.zeros_like(a) for name, a in arrays.items()},
        )


def adam_step(
    params: ModelParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float = 0.001,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-07,
) -> tuple[ModelParams, AdamState]:
    """One bias-corrected update, in place on params and state."""
    state.t += 1
    t = state.t
    bias1 = 1.0 - beta1 ** t
    bias2 = 1.0 - beta2 ** t
    for name, theta in params.arrays().items():
        grad = grads[name]
        if not np.isfinite(grad).all():
            raise NumericalError(f"non-finite gradient in block {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * np.square(grad)
        theta -= lr * (m / bias1) / (np.sqrt(v / bias2) + eps)
    return params, state
