"""
AdamW with cosine-annealed learning rate.
"""

import math
from typing import Dict

import numpy as np


def cosine_lr(base_lr: float, step: int, total_steps: int, min_ratio: float = 0.1) -> float:
    if total_steps <= 0:
        return base_lr
    progress = min(step / total_steps, 1.0)
    floor = base_lr * min_ratio
    return floor + 0.5 * (base_lr - floor) * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Adam with decoupled weight decay; updates parameter arrays in place."""

    def __init__(self, params: Dict[str, np.ndarray], lr: float = 3e-4, weight_decay: float = 0.01,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 total_steps: int = 0, min_lr_ratio: float = 0.1):
        self.params = params
        self.base_lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.total_steps = total_steps
        self.min_lr_ratio = min_lr_ratio
        self.step_count = 0
        self.m = {name: np.zeros_like(p) for name, p in params.items()}
        self.v = {name: np.zeros_like(p) for name, p in params.items()}

    @property
    def lr(self) -> float:
        return cosine_lr(self.base_lr, self.step_count, self.total_steps, self.min_lr_ratio)

    def step(self, grads: Dict[str, np.ndarray]):
        lr = self.lr
        self.step_count += 1
        t = self.step_count
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / (1.0 - self.beta1 ** t)
            v_hat = self.v[name] / (1.0 - self.beta2 ** t)
            p -= lr * (m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * p)
