from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .exceptions import ConfigError, DimensionError
from .numerics import Tensor


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


@dataclass
class BatchStats:
    mean: np.ndarray
    var: np.ndarray
    n: int


class QueryEncoder:
    """Two-layer query network: affine -> batch norm -> leaky ReLU -> affine.

    Maps partial-video features of size ``d`` to query embeddings of size ``h``.
    """

    def __init__(self, d: int, hidden: int, h: int, rng: np.random.Generator | None = None,
                 momentum: float = 0.9, eps: float = 1e-5):
        rng = np.random.default_rng(0) if rng is None else rng
        self.d, self.hidden, self.h = d, hidden, h
        self.momentum = momentum
        self.eps = eps
        self.params = {
            "W1": Tensor(glorot_uniform(rng, hidden, d), True, "W1"),
            "b1": Tensor(np.zeros(hidden), True, "b1"),
            "gamma": Tensor(np.ones(hidden), True, "gamma"),
            "beta": Tensor(np.zeros(hidden), True, "beta"),
            "W2": Tensor(glorot_uniform(rng, h, hidden), True, "W2"),
            "b2": Tensor(np.zeros(h), True, "b2"),
        }
        self.running_mean = np.zeros(hidden)
        self.running_var = np.ones(hidden)

    def _check_input(self, X) -> Tensor:
        X = nx.as_tensor(X)
        if X.ndim != 2 or X.shape[1] != self.d:
            raise DimensionError(f"encoder expects a (B, {self.d}) batch, got {X.shape}")
        if X.shape[0] < 1:
            raise DimensionError("encoder received an empty batch")
        return X

    def forward(self, X, train: bool) -> tuple[Tensor, BatchStats | None]:
        """Encode a batch without touching running statistics.

        In train mode the batch statistics are returned for :meth:`commit`.
        """
        X = self._check_input(X)
        p = self.params
        z = nx.affine(p["W1"], p["b1"], X)
        stats = None
        if train:
            if X.shape[0] < 2:
                raise ConfigError("train-mode batch norm needs a batch of at least 2")
            z, mu, var = nx.batch_norm(z, p["gamma"], p["beta"], self.eps)
            stats = BatchStats(mu, var, X.shape[0])
        else:
            z = nx.batch_norm_eval(z, p["gamma"], p["beta"], self.running_mean,
                                   self.running_var, self.eps)
        return nx.affine(p["W2"], p["b2"], nx.leaky_relu(z)), stats

    def commit(self, stats: BatchStats | None) -> None:
        if stats is None:
            return
        unbiased = stats.var * stats.n / (stats.n - 1)
        self.running_mean = self.momentum * self.running_mean + (1.0 - self.momentum) * stats.mean
        self.running_var = self.momentum * self.running_var + (1.0 - self.momentum) * unbiased

    def encode_query(self, X, train: bool = False) -> Tensor:
        q, stats = self.forward(X, train)
        self.commit(stats)
        return q
