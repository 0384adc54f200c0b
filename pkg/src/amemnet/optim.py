"""In-place parameter updates keyed by parameter name.

Both optimizers take ``params`` as a mapping of name -> float64 array (updated in
place) and ``grads`` as a mapping with the same keys. State is created lazily and
keyed by name, so the update of one tensor never depends on iteration order.
"""
from __future__ import annotations

from typing import Mapping

import numpy as np

from .exceptions import DimensionError


def _clip(grads: Mapping[str, np.ndarray], max_norm: float | None) -> Mapping[str, np.ndarray]:
    if max_norm is None:
        return grads
    total = np.sqrt(np.sum([np.sum(g * g) for g in grads.values()]))
    if total <= max_norm or total == 0:
        return grads
    factor = max_norm / total
    return {k: g * factor for k, g in grads.items()}


def _check(name: str, p: np.ndarray, g: np.ndarray) -> None:
    if p.shape != g.shape:
        raise DimensionError(f"{name}: parameter shape {p.shape} != gradient shape {g.shape}")


class SGDMomentum:
    """``v <- momentum * v + g``; ``theta <- theta - lr * v``."""

    def __init__(self, lr: float = 1e-4, momentum: float = 0.9, clip_norm: float | None = None):
        if not 0.0 <= momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        self.lr = lr
        self.momentum = momentum
        self.clip_norm = clip_norm
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        grads = _clip(grads, self.clip_norm)
        for name, g in grads.items():
            p = params[name]
            _check(name, p, g)
            v = self.velocity.get(name)
            if v is None:
                v = self.velocity[name] = np.zeros_like(p)
            v *= self.momentum
            v += g
            p -= self.lr * v


class Adam:
    def __init__(self, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, clip_norm: float | None = None):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        grads = _clip(grads, self.clip_norm)
        for name, g in grads.items():
            _check(name, params[name], g)
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            p = params[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def sgd_momentum_step(params, grads, state: SGDMomentum) -> SGDMomentum:
    state.step(params, grads)
    return state


def adam_step(params, grads, state: Adam) -> Adam:
    state.step(params, grads)
    return state
