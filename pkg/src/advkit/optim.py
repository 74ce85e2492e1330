"""Gradient-descent optimizers: SGD, Adam, and Adadelta.

Each optimizer owns per-parameter state (moment accumulators and a step
counter) and updates parameter tensors in place from their ``.grad``
fields.  Constants follow the common defaults: Adam beta1=0.9,
beta2=0.999, eps=1e-8; Adadelta rho=0.95, eps=1e-6.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError, ShapeError


class Optimizer:
    def __init__(self, params, learning_rate):
        self.params = list(params)
        self.learning_rate = float(learning_rate)
        self.step_count = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.step_count += 1
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ShapeError(
                    f"gradient shape {g.shape} != parameter shape {p.data.shape}"
                )
            if np.isnan(g).all():
                raise NumericError("optimizer step with all-NaN gradient")
            self._update(i, p, g)

    def _update(self, i, param, grad):
        raise NotImplementedError


class SGD(Optimizer):
    def _update(self, i, param, grad):
        param.data -= self.learning_rate * grad


class Adam(Optimizer):
    beta1 = 0.9
    beta2 = 0.999
    eps = 1e-8

    def __init__(self, params, learning_rate):
        super().__init__(params, learning_rate)
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def _update(self, i, param, grad):
        t = self.step_count
        self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad
        self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad * grad
        m_hat = self.m[i] / (1.0 - self.beta1**t)
        v_hat = self.v[i] / (1.0 - self.beta2**t)
        param.data -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


class Adadelta(Optimizer):
    rho = 0.95
    eps = 1e-6

    def __init__(self, params, learning_rate=1.0):
        super().__init__(params, learning_rate)
        self.acc_grad = [np.zeros_like(p.data) for p in self.params]
        self.acc_delta = [np.zeros_like(p.data) for p in self.params]

    def _update(self, i, param, grad):
        self.acc_grad[i] = self.rho * self.acc_grad[i] + (1.0 - self.rho) * grad * grad
        delta = (
            np.sqrt(self.acc_delta[i] + self.eps)
            / np.sqrt(self.acc_grad[i] + self.eps)
            * grad
        )
        self.acc_delta[i] = self.rho * self.acc_delta[i] + (1.0 - self.rho) * delta * delta
        param.data -= self.learning_rate * delta


_KINDS = {"sgd": SGD, "adam": Adam, "adadelta": Adadelta}


def make_optimizer(kind, params, learning_rate):
    try:
        cls = _KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown optimizer {kind!r}") from None
    return cls(params, learning_rate)
