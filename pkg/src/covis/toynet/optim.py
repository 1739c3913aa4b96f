"""Decoupled-weight-decay adaptive moments and the warmup/cosine schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autograd import Tensor


@dataclass(frozen=True)
class WarmupCosineSchedule:
    """Linear warmup from 0 to peak_lr, then cosine decay to min_lr.

    lr(0) = 0, lr(warmup_steps) = peak_lr, lr(total_steps) = min_lr.
    """

    peak_lr: float
    warmup_steps: int
    total_steps: int
    min_lr: float = 0.0

    def lr(self, step: int) -> float:
        if self.warmup_steps > 0 and step < self.warmup_steps:
            return self.peak_lr * step / self.warmup_steps
        if step >= self.total_steps:
            return self.min_lr
        span = max(1, self.total_steps - self.warmup_steps)
        t = (step - self.warmup_steps) / span
        return self.min_lr + (self.peak_lr - self.min_lr) * 0.5 * (1.0 + math.cos(math.pi * t))


class AdamW:
    """Adam with decoupled weight decay.

    Decay applies only to matrices (ndim >= 2); biases, norm gains, and
    the log-variance scalars are not decayed.
    """

    def __init__(self, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.05):
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: dict[str, int] = {}

    def step(self, params: dict[str, Tensor], lr: float, trainable: set[str] | None = None):
        b1, b2 = self.betas
        for name, p in params.items():
            if trainable is not None and name not in trainable:
                continue
            if p.grad is None:
                continue
            g = p.grad
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
                self.t[name] = 0
            self.t[name] += 1
            t = self.t[name]
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = self.m[name] / (1 - b1**t)
            v_hat = self.v[name] / (1 - b2**t)
            update = m_hat / (np.sqrt(v_hat) + self.eps)
            if p.data.ndim >= 2 and self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data = p.data - lr * update
