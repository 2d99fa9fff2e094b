"""Optimizers (SGD with momentum, Adam) and the cosine decay schedule.

Updates follow the usual recurrences. SGD: v <- momentum*v + g + wd*theta,
theta <- theta - lr*v. Adam: bias-corrected first/second moments with L2
weight decay folded into the gradient. Both refuse to step if any parameter
is missing its gradient.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor


class OptimizerError(RuntimeError):
    """Raised on a step with missing gradients or bad configuration."""


class CosineDecay:
    """rate(t) = initial * 0.5 * (1 + cos(pi * t / total_steps)); clamped at
    ``total_steps``, so the rate is monotonically non-increasing."""

    def __init__(self, initial_rate: float, total_steps: int):
        if total_steps < 1:
            raise ValueError(f"total_steps must be >= 1, got {total_steps}")
        self.initial_rate = initial_rate
        self.total_steps = total_steps

    def rate(self, step: int) -> float:
        t = min(max(step, 0), self.total_steps)
        return self.initial_rate * 0.5 * (1.0 + math.cos(math.pi * t / self.total_steps))


class _BaseOptimizer:
    def __init__(self, params: list[Tensor], lr: float, weight_decay: float, schedule: CosineDecay | None):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.schedule = schedule
        self.step_count = 0

    @property
    def current_lr(self) -> float:
        if self.schedule is None:
            return self.lr
        return self.schedule.rate(self.step_count)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def _grads(self) -> list[np.ndarray]:
        grads = []
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise OptimizerError(
                    f"optimizer step before backward: parameter {i} has no gradient"
                )
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            grads.append(g)
        return grads


class SGD(_BaseOptimizer):
    def __init__(self, params, lr: float, momentum: float = 0.9, weight_decay: float = 0.0, schedule=None):
        super().__init__(params, lr, weight_decay, schedule)
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        lr = self.current_lr
        for p, v, g in zip(self.params, self.velocity, self._grads()):
            v *= self.momentum
            v += g
            p.data -= lr * v
        self.step_count += 1


class Adam(_BaseOptimizer):
    def __init__(
        self,
        params,
        lr: float,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
        schedule=None,
    ):
        super().__init__(params, lr, weight_decay, schedule)
        self.betas = betas
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        lr = self.current_lr
        b1, b2 = self.betas
        self.t += 1
        for p, m, v, g in zip(self.params, self.m, self.v, self._grads()):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1**self.t)
            v_hat = v / (1.0 - b2**self.t)
            p.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)
        self.step_count += 1


def make_optimizer(
    algorithm: str,
    params: list[Tensor],
    lr: float,
    momentum: float = 0.9,
    weight_decay: float = 0.0,
    schedule: CosineDecay | None = None,
):
    if algorithm == "sgd":
        return SGD(params, lr=lr, momentum=momentum, weight_decay=weight_decay, schedule=schedule)
    if algorithm == "adam":
        return Adam(params, lr=lr, weight_decay=weight_decay, schedule=schedule)
    raise ValueError(f"unknown optimizer {algorithm!r} (expected 'sgd' or 'adam')")
