"""Adam with bias correction over named numpy parameters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One Adam update; returns new parameter arrays and the advanced state."""
    if set(params) != set(grads):
        raise ValueError("params and grads must share names")
    t = state.step + 1
    new_params, new_m, new_v = {}, {}, {}
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = beta1 * state.m.get(name, np.zeros_like(p)) + (1.0 - beta1) * g
        v = beta2 * state.v.get(name, np.zeros_like(p)) + (1.0 - beta2) * g * g
        new_params[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(t, new_m, new_v)


class Adam:
    """Stateful wrapper updating DiffArray parameters in place."""

    def __init__(self, named_params: dict, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = named_params
        self.lr, self.betas, self.eps = lr, tuple(betas), eps
        self.state = AdamState()

    def step(self):
        values = {k: p.value for k, p in self.params.items()}
        grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.value)) for k, p in self.params.items()}
        new, self.state = adam_step(values, grads, self.state, self.lr, self.betas[0], self.betas[1], self.eps)
        for k, p in self.params.items():
            p.value = new[k]

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None
