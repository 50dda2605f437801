"""ADAM with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: Dict[int, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[int, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[Tensor], state: AdamState) -> None:
    """One bias-corrected ADAM update over ``params``.

    Parameter arrays are replaced rather than modified in place, so graphs
    recorded before the step keep seeing the values they were built with.
    Moments are keyed by position in ``params``; pass the same list each call.
    """
    for idx, p in enumerate(params):
        if p.grad is None:
            label = p.name or f"#{idx}"
            raise ValueError(f"adam_step: parameter {label} has no gradient")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for idx, p in enumerate(params):
        g = p.grad
        m = state.first_moment.get(idx)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        else:
            v = state.second_moment[idx]
        if m.shape != p.data.shape:
            raise ValueError(f"adam_step: moment shape {m.shape} does not match parameter {p.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.first_moment[idx] = m
        state.second_moment[idx] = v
        update = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
        p.data = (p.data - update).astype(p.data.dtype, copy=False)


class Adam:
    """Convenience wrapper binding a parameter list to an :class:`AdamState`."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params: List[Tensor] = list(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], epsilon=eps)

    def step(self) -> None:
        adam_step(self.params, self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
