"""ADAM optimizer with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import DiffTensor


@dataclass
class AdamState:
    """Per-parameter moment estimates plus a shared step counter."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params: list[DiffTensor], lr=0.001, beta1=0.9, beta2=0.999, epsilon=1e-7):
        state = cls(lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon)
        state.m = [np.zeros_like(p.value) for p in params]
        state.v = [np.zeros_like(p.value) for p in params]
        return state


def adam_step(params: list[DiffTensor], state: AdamState) -> None:
    """Apply one bias-corrected ADAM update and zero the gradients."""
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p.value -= (state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)).astype(np.float32)
        p.zero_grad()
