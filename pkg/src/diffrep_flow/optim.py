"""Adam with a per-call learning-rate schedule.

One implementation serves the per-step pullback solver, diffrep
initialization, and the gradient-ascent baselines so the compute budgets
stay comparable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Adam:
    """Moment-based first-order update on a flat parameter vector."""

    dim: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        self.m = np.zeros(self.dim)
        self.v = np.zeros(self.dim)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return params - lr * m_hat / (np.sqrt(v_hat) + self.eps)


def cosine_lr(base: float, t: int, total: int, floor_frac: float = 0.0) -> float:
    """Cosine decay from ``base`` to ``floor_frac * base`` over ``total`` steps."""
    if total <= 1:
        return base
    frac = 0.5 * (1.0 + np.cos(np.pi * t / (total - 1)))
    return base * (floor_frac + (1.0 - floor_frac) * frac)
