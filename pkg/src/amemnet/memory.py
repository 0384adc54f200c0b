"""Key-value memory generator.

Queries address key slots with soft attention; full-video features are written
into the value slots through sigmoid erase and tanh add gates; the generated
feature is the partial feature plus the attention-weighted read of the values.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .encoder import BatchStats, QueryEncoder, glorot_uniform
from .exceptions import ContractError, DimensionError
from .numerics import Tensor

SIMILARITIES = ("dot", "neg_l2")


def _batch(t) -> Tensor:
    t = nx.as_tensor(t)
    return nx.reshape(t, (1, t.shape[0])) if t.ndim == 1 else t


def address(q, keys, similarity: str = "dot") -> Tensor:
    """Softmax over slots of ``similarity(q, keys[i])``. Accepts one query or a batch."""
    q, keys = nx.as_tensor(q), nx.as_tensor(keys)
    single = q.ndim == 1
    Q = _batch(q)
    if keys.ndim != 2 or Q.shape[1] != keys.shape[1]:
        raise DimensionError(f"query size {Q.shape[1]} does not match key slots {keys.shape}")
    if similarity == "dot":
        scores = nx.matmul(Q, nx.transpose(keys))
    elif similarity == "neg_l2":
        scores = nx.pairwise_neg_l2(Q, keys)
    else:
        raise ValueError(f"unknown similarity {similarity!r}")
    alpha = nx.softmax(scores, axis=-1)
    return nx.reshape(alpha, (keys.shape[0],)) if single else alpha


def gates(V, W_erase, W_add) -> tuple[Tensor, Tensor]:
    """Erase vectors ``sigmoid(W_e v)`` and add vectors ``tanh(W_a v)`` for each row of ``V``."""
    V = _batch(V)
    return nx.sigmoid(nx.matmul(V, nx.transpose(W_erase))), nx.tanh(nx.matmul(V, nx.transpose(W_add)))


def write(values, alpha, V, W_erase, W_add, return_erased: bool = False):
    """Gated write of a batch of full features into the value slots.

    Slot ``i`` becomes ``M[i] * mean_b(1 - alpha_b[i] e_b) + mean_b(alpha_b[i] a_b)``,
    which is the single-sample update when the batch has one element. Returns a new
    tensor; ``values`` is left untouched.
    """
    values = nx.as_tensor(values)
    A, V = _batch(alpha), _batch(V)
    if A.shape[1] != values.shape[0]:
        raise DimensionError(f"attention over {A.shape[1]} slots, memory has {values.shape[0]}")
    if A.shape[0] != V.shape[0]:
        raise DimensionError(f"{A.shape[0]} attention rows for {V.shape[0]} features")
    if V.shape[1] != values.shape[1]:
        raise DimensionError(f"feature size {V.shape[1]} does not match value slots {values.shape}")
    inv_b = 1.0 / A.shape[0]
    e, a = gates(V, W_erase, W_add)
    At = nx.transpose(A)
    keep = nx.sub(1.0, nx.scale(nx.matmul(At, e), inv_b))
    erased = nx.mul(values, keep)
    new = nx.add(erased, nx.scale(nx.matmul(At, a), inv_b))
    return (new, erased) if return_erased else new


def read(x, alpha, values) -> Tensor:
    """``x + sum_i alpha[i] * values[i]`` (one vector or a batch)."""
    x, values = nx.as_tensor(x), nx.as_tensor(values)
    single = x.ndim == 1
    X, A = _batch(x), _batch(alpha)
    if A.shape[1] != values.shape[0] or X.shape[1] != values.shape[1] or X.shape[0] != A.shape[0]:
        raise DimensionError(
            f"read: x {x.shape}, alpha {A.shape} and values {values.shape} do not conform")
    out = nx.add(X, nx.matmul(A, values))
    return nx.reshape(out, (values.shape[1],)) if single else out


class KeyValueMemory:
    def __init__(self, slots: int, h: int, d: int, rng: np.random.Generator | None = None,
                 similarity: str = "dot"):
        if similarity not in SIMILARITIES:
            raise ValueError(f"similarity must be one of {SIMILARITIES}, got {similarity!r}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.slots, self.h, self.d = slots, h, d
        self.similarity = similarity
        self.params = {
            "keys": Tensor(rng.normal(0.0, 1.0 / np.sqrt(h), size=(slots, h)), True, "keys"),
            "values": Tensor(rng.normal(0.0, 1.0 / np.sqrt(d), size=(slots, d)), True, "values"),
            "W_erase": Tensor(glorot_uniform(rng, d, d), True, "W_erase"),
            "W_add": Tensor(glorot_uniform(rng, d, d), True, "W_add"),
        }

    def address(self, Q) -> Tensor:
        return address(Q, self.params["keys"], self.similarity)

    def write(self, alpha, V, return_erased: bool = False):
        p = self.params
        return write(p["values"], alpha, V, p["W_erase"], p["W_add"], return_erased)

    def read(self, X, alpha, values=None) -> Tensor:
        return read(X, alpha, self.params["values"] if values is None else values)


@dataclass
class PendingState:
    """State changes produced by a training forward, applied by :func:`commit`."""

    bn_stats: BatchStats | None = None
    values: np.ndarray | None = None


def generate(X, encoder: QueryEncoder, memory: KeyValueMemory, train: bool = False,
             V=None) -> tuple[Tensor, PendingState]:
    """Generated full features for a batch of partial features.

    Train mode writes ``V`` into the value slots (once for the batch) and reads from
    the written matrix; the new state is returned, not applied. Eval mode reads the
    frozen values and returns an empty :class:`PendingState`.
    """
    if train and V is None:
        raise ContractError("train-mode generation needs the paired full features")
    X = nx.as_tensor(X)
    q, stats = encoder.forward(X, train)
    alpha = memory.address(q)
    if not train:
        return memory.read(X, alpha), PendingState()
    new_values = memory.write(alpha, V)
    return memory.read(X, alpha, new_values), PendingState(stats, new_values.data)


def commit(encoder: QueryEncoder, memory: KeyValueMemory, pending: PendingState) -> None:
    encoder.commit(pending.bn_stats)
    if pending.values is not None:
        memory.params["values"].data[...] = pending.values
