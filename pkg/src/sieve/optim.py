"""First-order optimizers over dictionaries of float arrays.

Parameters are replaced, never mutated in place, so tensors built from an
earlier value stay valid.
"""

from __future__ import annotations

import numpy as np


class SGD:
    def __init__(self, lr: float):
        if not lr > 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.lr = float(lr)

    def step(self, params: dict, grads: dict) -> None:
        for name, g in grads.items():
            p = params[name]
            params[name] = (p.astype(np.float64) - self.lr * g).astype(p.dtype)


class Adam:
    """Adam with bias correction; moments kept in float64."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if not lr > 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, g in grads.items():
            m = self.m.get(name, 0.0)
            v = self.v.get(name, 0.0)
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            p = params[name]
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            params[name] = (p.astype(np.float64) - update).astype(p.dtype)


def make_optimizer(tag: str, lr: float):
    if tag == "adam":
        return Adam(lr)
    if tag == "sgd":
        return SGD(lr)
    raise ValueError(f"unknown optimizer {tag!r} (expected 'adam' or 'sgd')")
