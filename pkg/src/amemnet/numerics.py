"""Float64 tensors, a reverse-mode gradient tape and the primitive ops used by the model.

Every primitive computes its forward value with numpy and, when a :class:`GradTape`
is active and at least one input requires a gradient, records a closure mapping
the output cotangent to input cotangents. ``finite_diff_check`` is the oracle the
test-suite uses to validate each of those closures.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .exceptions import DimensionError

LEAKY_SLOPE = 0.01

_local = threading.local()


class Tensor:
    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64, order="C")
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar for the handful of elementwise ops
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class TapeRecord:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]


@dataclass
class GradTape:
    """Ordered log of primitive applications for one forward pass.

    Use as a context manager; ops executed inside the block are recorded.
    Tapes nest; the innermost active tape receives the records. A tape is
    single-writer and thread-local.
    """

    records: list[TapeRecord] = field(default_factory=list)

    def __enter__(self) -> "GradTape":
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()

    def __len__(self) -> int:
        return len(self.records)

    def gradient(self, target: Tensor, sources: Sequence[Tensor]) -> list[np.ndarray]:
        """Replay the tape backward from scalar ``target``.

        Returns one gradient array per source (zeros when the source was not reached).
        """
        if target.data.size != 1:
            raise DimensionError(f"gradient target must be scalar, got shape {target.shape}")
        cot: dict[int, np.ndarray] = {id(target): np.ones_like(target.data)}
        for rec in reversed(self.records):
            g = cot.pop(id(rec.output), None)
            if g is None:
                continue
            in_grads = rec.backward(g)
            for t, gi in zip(rec.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in cot:
                    cot[key] = cot[key] + gi
                else:
                    cot[key] = gi
        return [cot.get(id(s), np.zeros_like(s.data)) for s in sources]


def _tape_stack() -> list[GradTape]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def _record(op: str, inputs: Sequence[Tensor], out: np.ndarray, backward) -> Tensor:
    stack = _tape_stack()
    needs = bool(stack) and any(t.requires_grad for t in inputs)
    result = Tensor(out, requires_grad=needs)
    if needs:
        stack[-1].records.append(TapeRecord(op, tuple(inputs), result, backward))
    return result


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not conform") from None


# elementwise arithmetic -------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "add")
    sa, sb = a.shape, b.shape
    return _record("add", (a, b), a.data + b.data,
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "sub")
    sa, sb = a.shape, b.shape
    return _record("sub", (a, b), a.data - b.data,
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "mul")
    ad, bd = a.data, b.data
    return _record("mul", (a, b), ad * bd,
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record("neg", (a,), -a.data, lambda g: (-g,))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _record("scale", (a,), a.data * c, lambda g: (g * c,))


# linear algebra ---------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Product of two 2-D tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return _record("matmul", (a, b), ad @ bd, lambda g: (g @ bd.T, ad.T @ g))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.shape}")
    return _record("transpose", (a,), a.data.T.copy(), lambda g: (g.T,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {old} to {shape}") from None
    return _record("reshape", (a,), out, lambda g: (g.reshape(old),))


def affine(W, b, x) -> Tensor:
    """``W x + b`` for a vector ``x``, or row-wise ``x W^T + b`` for a batch."""
    W, b, x = as_tensor(W), as_tensor(b), as_tensor(x)
    if W.ndim != 2 or b.ndim != 1 or b.shape[0] != W.shape[0]:
        raise DimensionError(f"affine: weight {W.shape} and bias {b.shape} do not conform")
    if x.ndim not in (1, 2) or x.shape[-1] != W.shape[1]:
        raise DimensionError(f"affine: input {x.shape} does not match weight {W.shape}")
    Wd, xd = W.data, x.data
    if xd.ndim == 1:
        out = Wd @ xd + b.data
        return _record("affine", (W, b, x), out,
                       lambda g: (np.outer(g, xd), g, Wd.T @ g))
    out = xd @ Wd.T + b.data
    return _record("affine", (W, b, x), out,
                   lambda g: (g.T @ xd, g.sum(axis=0), g @ Wd))


# reductions -------------------------------------------------------------------

def sum(a, axis: int | None = None) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _record("sum", (a,), np.sum(a.data, axis=axis), backward)


def mean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    if n == 0:
        raise DimensionError("mean of an empty tensor")
    return scale(sum(a, axis=axis), 1.0 / n)


# nonlinearities ---------------------------------------------------------------

def _sigmoid(x: np.ndarray) -> np.ndarray:
    # branch-free stable form: exp only ever sees non-positive arguments
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = _sigmoid(x.data)
    return _record("sigmoid", (x,), y, lambda g: (g * y * (1.0 - y),))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _record("tanh", (x,), y, lambda g: (g * (1.0 - y * y),))


def leaky_relu(x, slope: float = LEAKY_SLOPE) -> Tensor:
    x = as_tensor(x)
    d = np.where(x.data > 0, 1.0, slope)
    return _record("leaky_relu", (x,), x.data * d, lambda g: (g * d,))


def activation(x, kind: str) -> Tensor:
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    if kind == "leaky_relu":
        return leaky_relu(x)
    raise ValueError(f"unknown activation {kind!r}")


def log_sigmoid(x) -> Tensor:
    """``log(sigmoid(x))`` evaluated as ``-softplus(-x)``; finite for any finite ``x``."""
    x = as_tensor(x)
    out = -np.logaddexp(0.0, -x.data)
    s_neg = _sigmoid(-x.data)
    return _record("log_sigmoid", (x,), out, lambda g: (g * s_neg,))


def _softmax(s: np.ndarray, axis: int) -> np.ndarray:
    z = np.exp(s - np.max(s, axis=axis, keepdims=True))
    return z / np.sum(z, axis=axis, keepdims=True)


def softmax(s, axis: int = -1) -> Tensor:
    s = as_tensor(s)
    if s.data.size == 0 or s.shape[axis] == 0:
        raise DimensionError("softmax of an empty vector")
    y = _softmax(s.data, axis)

    def backward(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return _record("softmax", (s,), y, backward)


def log_softmax(s, axis: int = -1) -> Tensor:
    s = as_tensor(s)
    if s.data.size == 0 or s.shape[axis] == 0:
        raise DimensionError("log_softmax of an empty vector")
    shifted = s.data - np.max(s.data, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    out = shifted - lse
    p = np.exp(out)
    return _record("log_softmax", (s,), out,
                   lambda g: (g - p * np.sum(g, axis=axis, keepdims=True),))


# layer-level primitives -------------------------------------------------------

def batch_norm(z, gamma, beta, eps: float) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Normalise each column of ``z`` by its batch statistics, then scale and shift.

    Returns the output plus the (biased) batch mean and variance so the caller can
    update running statistics.
    """
    z, gamma, beta = as_tensor(z), as_tensor(gamma), as_tensor(beta)
    if z.ndim != 2 or z.shape[0] < 2:
        raise DimensionError(f"batch_norm needs a batch of at least 2 rows, got {z.shape}")
    n = z.shape[0]
    mu = z.data.mean(axis=0)
    var = z.data.var(axis=0)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (z.data - mu) * inv_std
    gd = gamma.data
    out = xhat * gd + beta.data

    def backward(g):
        dxhat = g * gd
        dz = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * np.sum(dxhat * xhat, axis=0))
        return dz, np.sum(g * xhat, axis=0), g.sum(axis=0)

    return _record("batch_norm", (z, gamma, beta), out, backward), mu, var


def batch_norm_eval(z, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
                    eps: float) -> Tensor:
    z, gamma, beta = as_tensor(z), as_tensor(gamma), as_tensor(beta)
    inv_std = 1.0 / np.sqrt(running_var + eps)
    xhat = (z.data - running_mean) * inv_std
    gd = gamma.data
    out = xhat * gd + beta.data

    def backward(g):
        axes = tuple(range(g.ndim - 1))
        return g * gd * inv_std, np.sum(g * xhat, axis=axes), np.sum(g, axis=axes)

    return _record("batch_norm_eval", (z, gamma, beta), out, backward)


def pairwise_neg_l2(Q, K) -> Tensor:
    """``S[i, j] = -||Q[i] - K[j]||``. The gradient at zero distance is taken as 0."""
    Q, K = as_tensor(Q), as_tensor(K)
    if Q.ndim != 2 or K.ndim != 2 or Q.shape[1] != K.shape[1]:
        raise DimensionError(f"pairwise_neg_l2: {Q.shape} vs {K.shape}")
    diff = Q.data[:, None, :] - K.data[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    safe = np.where(dist > 0, dist, 1.0)

    def backward(g):
        w = np.where(dist > 0, g / safe, 0.0)[:, :, None] * diff
        return -w.sum(axis=1), w.sum(axis=0)

    return _record("pairwise_neg_l2", (Q, K), -dist, backward)


# gradient verification --------------------------------------------------------

def _params_as_items(params) -> list[tuple[str, Tensor]]:
    if isinstance(params, Mapping):
        return list(params.items())
    if isinstance(params, Tensor):
        return [(params.name or "param", params)]
    return [(t.name or f"param{i}", t) for i, t in enumerate(params)]


def central_difference(f: Callable[[], float], flat: np.ndarray, i: int, eps: float,
                       points: int = 3) -> float:
    """Derivative of ``f`` along coordinate ``i`` of ``flat`` (perturbed in place, then restored).

    ``points=3`` is the usual ``(f(+h) - f(-h)) / 2h``; ``points=5`` is the fourth-order
    central stencil, which tolerates a larger ``eps`` and hence less roundoff.
    """
    orig = flat[i]

    def at(delta):
        flat[i] = orig + delta
        try:
            return f()
        finally:
            flat[i] = orig

    if points == 3:
        return (at(eps) - at(-eps)) / (2.0 * eps)
    if points == 5:
        return (8.0 * (at(eps) - at(-eps)) - (at(2 * eps) - at(-2 * eps))) / (12.0 * eps)
    raise ValueError("points must be 3 or 5")


def gradient_errors(f: Callable[[], Tensor], params, eps: float = 1e-6,
                    points: int = 3) -> dict[str, float]:
    """Per-parameter max relative error between tape gradients and central differences.

    ``f`` must rebuild its forward from the current values of ``params`` each call and
    must not mutate them. Error per coordinate is
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    items = _params_as_items(params)
    with GradTape() as tape:
        loss = f()
    analytic = tape.gradient(loss, [t for _, t in items])

    def value() -> float:
        v = float(f().data)
        if not np.isfinite(v):
            raise FloatingPointError("objective is not finite at a perturbed point")
        return v

    errors: dict[str, float] = {}
    for (name, t), grad in zip(items, analytic):
        flat = t.data.reshape(-1)
        gflat = grad.reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            num = central_difference(value, flat, i, eps, points)
            err = abs(gflat[i] - num) / max(1e-8, abs(gflat[i]) + abs(num))
            worst = max(worst, err)
        errors[name] = worst
    return errors


def finite_diff_check(f: Callable[[], Tensor], params, eps: float = 1e-6,
                      points: int = 3) -> float:
    """Max relative gradient error over every coordinate of ``params``."""
    errs = gradient_errors(f, params, eps, points)
    return max(errs.values(), default=0.0)


def parameters(tensors: Iterable[Tensor]) -> list[Tensor]:
    """Mark tensors as trainable leaves and return them as a list."""
    out = list(tensors)
    for t in out:
        t.requires_grad = True
    return out
