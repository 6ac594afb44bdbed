from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class UsageError(RuntimeError):
    """The optimizer was driven out of contract (e.g. a parameter without a gradient)."""


@dataclass
class AdamState:
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


class Adam:
    """Bias-corrected Adam without weight decay."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.state = AdamState(
            first_moment=[np.zeros_like(p.data) for p in self.params],
            second_moment=[np.zeros_like(p.data) for p in self.params],
            learning_rate=lr,
            beta1=beta1,
            beta2=beta2,
            epsilon=eps,
        )

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        for k, p in enumerate(self.params):
            if p.grad is None:
                raise UsageError(f"parameter #{k} with shape {p.shape} has no gradient")
        st = self.state
        st.step_count += 1
        t = st.step_count
        b1, b2 = st.beta1, st.beta2
        c1 = 1.0 - b1**t
        c2 = 1.0 - b2**t
        for p, m, v in zip(self.params, st.first_moment, st.second_moment):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= st.learning_rate * (m / c1) / (np.sqrt(v / c2) + st.epsilon)
        self.zero_grad()


def adam_step(params, state: AdamState):
    """Functional form: apply one Adam update to ``params`` using ``state``."""
    opt = Adam.__new__(Adam)
    opt.params = list(params)
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.data) for p in opt.params]
        state.second_moment = [np.zeros_like(p.data) for p in opt.params]
    opt.state = state
    opt.step()
    return opt.params, state


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params if p.grad is not None)))
    if total > max_norm > 0:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total
