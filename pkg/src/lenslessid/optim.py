"""Adaptive-moment-estimation optimizer for autodiff leaf tensors."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class Adam:
    """Standard Adam with bias correction; state round-trips bit-exactly."""

    def __init__(self, params, lr=5e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / b1t
            v_hat = self.v[i] / b2t
            p.data = p.data - (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)

    def state_arrays(self, prefix="adam") -> dict:
        out = {f"{prefix}.t": np.array([self.t], dtype=np.int64)}
        for i in range(len(self.params)):
            out[f"{prefix}.m{i}"] = self.m[i].copy()
            out[f"{prefix}.v{i}"] = self.v[i].copy()
        return out

    def load_state_arrays(self, arrays: dict, prefix="adam"):
        self.t = int(arrays[f"{prefix}.t"][0])
        for i in range(len(self.params)):
            self.m[i] = arrays[f"{prefix}.m{i}"].copy()
            self.v[i] = arrays[f"{prefix}.v{i}"].copy()
