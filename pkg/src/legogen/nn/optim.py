from __future__ import annotations

from typing import Dict

import numpy as np

from .layers import ParamStore


class MissingGradientError(RuntimeError):
    pass


class Adam:
    """Bias-corrected Adam. Parameters without a gradient this step are skipped."""

    def __init__(self, params: ParamStore, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m: Dict[str, np.ndarray] = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v: Dict[str, np.ndarray] = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        items = [(k, p) for k, p in self.params.items() if p.grad is not None]
        if not items:
            raise MissingGradientError("no parameter has a gradient; call backward() first")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in items:
            g = p.grad
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.grad = None
