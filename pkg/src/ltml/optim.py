"""Adam with per-parameter learning rates (one optimizer, two rate groups)."""

from __future__ import annotations

import numpy as np


class Adam:
    """Standard Adam; moment buffers exist exactly for the managed tensors.

    A zero (or absent) gradient leaves a fresh parameter untouched: with
    m = v = 0 the update is 0 / (sqrt(0) + eps) = 0 regardless of bias
    correction.
    """

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        # params: list of (name, tensor, learning_rate), fixed order
        self.params = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(t.data) for name, t, _ in self.params}
        self.v = {name: np.zeros_like(t.data) for name, t, _ in self.params}

    def zero_grad(self):
        for _, tensor, _ in self.params:
            tensor.grad = None

    def step(self):
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - self.beta1 ** t
        bias2 = 1.0 - self.beta2 ** t
        for name, tensor, lr in self.params:
            grad = tensor.grad
            if grad is None:
                grad = np.zeros_like(tensor.data)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            m_hat = m / bias1
            v_hat = v / bias2
            tensor.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)
