"""Adam-style optimizer with global-norm gradient clipping."""

from __future__ import annotations

import numpy as np

from .autograd import Node


def lr_schedule(iteration: int, peak: float = 1e-4, warmup: int = 1000,
                decay: int = 100000) -> float:
    """Linear warmup to the peak, then linear decay to zero over the horizon."""
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    if iteration <= warmup:
        return peak * (iteration / warmup)
    return peak * max(0.0, 1.0 - (iteration - warmup) / decay)


def clip_global_norm(nodes: list[Node], max_norm: float) -> float:
    """Scale all gradients in place so their joint L2 norm is <= max_norm."""
    total = 0.0
    for n in nodes:
        if n.grad is not None:
            total += float((n.grad.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0:
        factor = max_norm / norm
        for n in nodes:
            if n.grad is not None:
                n.grad *= factor
    return norm


class Adam:
    """Adam with bias correction and optional decoupled weight decay."""

    def __init__(self, nodes: list[Node], beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.nodes = list(nodes)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(n.value) for n in self.nodes]
        self.v = [np.zeros_like(n.value) for n in self.nodes]

    def step(self, lr: float) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for node, m, v in zip(self.nodes, self.m, self.v):
            g = node.grad
            if g is None:
                continue
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            node.value -= (lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                node.value -= lr * self.weight_decay * node.value

    def zero_grad(self) -> None:
        for node in self.nodes:
            node.zero_grad()

    def state(self) -> dict:
        return {
            "step_count": self.step_count,
            "m": [m.copy() for m in self.m],
            "v": [v.copy() for v in self.v],
        }

    def load_state(self, state: dict) -> None:
        self.step_count = int(state["step_count"])
        self.m = [np.array(m, dtype=n.value.dtype) for m, n in zip(state["m"], self.nodes)]
        self.v = [np.array(v, dtype=n.value.dtype) for v, n in zip(state["v"], self.nodes)]
