"""Adam optimizer with bias correction, updating parameter arrays in place."""

from __future__ import annotations

import numpy as np


class NonFiniteGradient(ValueError):
    pass


class Adam:
    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        """`params` is a list of (label, array) pairs as returned by
        `Network.parameters()`; arrays are updated in place."""
        self.labels = [label for label, _ in params]
        self.arrays = [arr for _, arr in params]
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(a) for a in self.arrays]
        self.v = [np.zeros_like(a) for a in self.arrays]

    def step(self, grads, lr: float | None = None):
        if len(grads) != len(self.arrays):
            raise ValueError(f"expected {len(self.arrays)} gradient arrays, got {len(grads)}")
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for i, (arr, g) in enumerate(zip(self.arrays, grads)):
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(f"non-finite gradient in {self.labels[i]}")
            m = self.m[i]
            v = self.v[i]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            arr -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
