"""Adaptive-moment (Adam) optimisation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from stressanon.neural.tensor import Tensor


@dataclass
class AdamState:
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray | None], state: AdamState,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8
              ) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new parameter arrays and state."""
    if not state.m:
        state = AdamState(0, [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])
    if len(state.m) != len(params):
        raise ValueError(f"optimizer state tracks {len(state.m)} tensors, got {len(params)}")
    t = state.step + 1
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p)
        if m.shape != p.shape:
            raise ValueError(f"state shape {m.shape} does not match parameter shape {p.shape}")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(t, new_m, new_v)


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState()

    def step(self) -> None:
        arrays = [p.data for p in self.params]
        grads = [p.grad for p in self.params]
        updated, self.state = adam_step(arrays, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)
        for p, new in zip(self.params, updated):
            p.data = new

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
