"""Adam optimizer with bias correction, one state per parameter."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .tensor import AutodiffError, Tensor


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)


def adam_step(param: Tensor, state: AdamState) -> None:
    """Apply one bias-corrected Adam update in place; the grad is left intact."""
    if param.grad is None:
        raise AutodiffError("adam_step: parameter has no gradient buffer")
    if state.m is None:
        state.m = np.zeros_like(param.data)
        state.v = np.zeros_like(param.data)
    g = param.grad
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    param.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)


class Adam:
    """Convenience wrapper managing AdamState for a fixed parameter list."""

    def __init__(self, params: Iterable[Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = list(params)
        self.states = [AdamState(lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon)
                       for _ in self.params]

    def step(self) -> None:
        for p, s in zip(self.params, self.states):
            p.ensure_grad()
            adam_step(p, s)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
