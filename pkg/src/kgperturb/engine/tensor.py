"""Dense 2-D tensors recorded on a reverse-mode tape.

Operations are only recorded while a :class:`Tape` is active and at least
one input requires a gradient; outside a tape every op is a plain numpy
computation. Gradients accumulate into ``Tensor.grad``.
"""
from __future__ import annotations

from typing import Callable, List, Optional, Sequence

import numpy as np

from ..exceptions import EmptySegment, ShapeMismatch

_ACTIVE: List["Tape"] = []


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = "", dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeMismatch(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of operations; ``backward`` walks it in reverse."""

    def __init__(self):
        self.records: List[tuple] = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def record(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable):
        self.records.append((out, tuple(inputs), backward))

    def backward(self, loss: Tensor, grad: Optional[np.ndarray] = None):
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf on the tape."""
        grads = {id(loss): np.ones_like(loss.data) if grad is None else grad}
        produced = {id(out) for out, _, _ in self.records}
        leaves = {}
        for out, inputs, fn in reversed(self.records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, fn(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                grads[key] = grads[key] + gi if key in grads else gi
                if key not in produced:
                    leaves[key] = inp
        for key, t in leaves.items():
            g = grads[key].astype(t.data.dtype, copy=False)
            t.grad = g if t.grad is None else t.grad + g


def _tape() -> Optional[Tape]:
    return _ACTIVE[-1] if _ACTIVE else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _result(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    tape = _tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape.record(out, inputs, backward)
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    axes = tuple(ax for ax in range(2) if shape[ax] == 1 and g.shape[ax] != 1)
    return g.sum(axis=axes, keepdims=True)


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    for ax in range(2):
        if a.shape[ax] != b.shape[ax] and 1 not in (a.shape[ax], b.shape[ax]):
            raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


# -- elementwise ----------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return _result(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    return _result(a.data * a.data.dtype.type(c), (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    return _result(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else add(y, b)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(x.data * mask, (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    factor = np.where(x.data > 0, 1.0, slope).astype(x.data.dtype)
    return _result(x.data * factor, (x,), lambda g: (g * factor,))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    other = 1 - axis
    if len({t.shape[other] for t in tensors}) != 1:
        raise ShapeMismatch(f"concat: mismatched shapes {[t.shape for t in tensors]}")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        if axis == 1:
            return tuple(g[:, bounds[k]:bounds[k + 1]] for k in range(len(tensors)))
        return tuple(g[bounds[k]:bounds[k + 1]] for k in range(len(tensors)))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def mean_rows(x: Tensor) -> Tensor:
    """Column-wise mean over rows: [N, D] -> [1, D]."""
    n = x.shape[0]
    return _result(x.data.mean(axis=0, keepdims=True), (x,),
                   lambda g: (np.broadcast_to(g / n, x.shape).copy(),))


def sum_all(x: Tensor) -> Tensor:
    return _result(x.data.sum(keepdims=True).reshape(1, 1), (x,),
                   lambda g: (np.full(x.shape, g.reshape(-1)[0], dtype=x.data.dtype),))


def take_rows(x: Tensor, index) -> Tensor:
    index = np.asarray(index, dtype=np.int64)

    def backward(g):
        out = np.zeros_like(x.data)
        np.add.at(out, index, g)
        return (out,)

    return _result(x.data[index], (x,), backward)


# -- normalisation / regularisation --------------------------------------------

def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-column batch normalisation; running statistics are updated in place when training."""
    if not training or x.shape[0] < 2:
        # a single row carries no batch statistics; fall back to running stats
        inv = (1.0 / np.sqrt(running_var + eps)).astype(x.data.dtype)
        shifted = sub(x, running_mean.astype(x.data.dtype))
        normed = mul(shifted, inv)
        return add(mul(normed, gamma), beta)
    n = x.shape[0]
    mu = x.data.mean(axis=0, keepdims=True)
    var = x.data.var(axis=0, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    running_mean *= 1 - momentum
    running_mean += momentum * mu.astype(running_mean.dtype)
    running_var *= 1 - momentum
    running_var += momentum * (var * n / (n - 1)).astype(running_var.dtype)

    def backward(g):
        dxhat = g * gamma.data
        dx = inv / n * (n * dxhat - dxhat.sum(axis=0, keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=0, keepdims=True))
        return (dx, (g * xhat).sum(axis=0, keepdims=True), g.sum(axis=0, keepdims=True))

    return _result(xhat * gamma.data + beta.data, (x, gamma, beta), backward)


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    if not training or rate <= 0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return _result(x.data * keep, (x,), lambda g: (g * keep,))


# -- graph primitives ------------------------------------------------------------

def segment_softmax(scores: Tensor, segments, n_segments: int) -> Tensor:
    """Softmax of each column within contiguous-index segments of rows.

    ``segments[e]`` is the segment id of row ``e``; every id in
    ``range(n_segments)`` must own at least one row.
    """
    seg = np.asarray(segments, dtype=np.int64)
    if seg.shape[0] != scores.shape[0]:
        raise ShapeMismatch(f"segment map has {seg.shape[0]} entries for {scores.shape[0]} rows")
    counts = np.bincount(seg, minlength=n_segments) if seg.size else np.zeros(n_segments, dtype=np.int64)
    if counts.shape[0] > n_segments:
        raise ShapeMismatch("segment id out of range")
    if (counts == 0).any():
        raise EmptySegment(f"segment {int(np.argmin(counts))} has no rows")
    s = scores.data
    seg_max = np.full((n_segments, s.shape[1]), -np.inf, dtype=s.dtype)
    np.maximum.at(seg_max, seg, s)
    ex = np.exp(s - seg_max[seg])
    denom = np.zeros((n_segments, s.shape[1]), dtype=s.dtype)
    np.add.at(denom, seg, ex)
    alpha = ex / denom[seg]

    def backward(g):
        dot = np.zeros((n_segments, s.shape[1]), dtype=s.dtype)
        np.add.at(dot, seg, g * alpha)
        return (alpha * (g - dot[seg]),)

    return _result(alpha, (scores,), backward)


def segment_weighted_sum(messages: Tensor, weights: Tensor, segments, n_segments: int) -> Tensor:
    """``out[s] = sum_{e in s} weights[e, h] * messages[e, h-block]`` per head block.

    ``messages`` is [E, H*C], ``weights`` is [E, H]; the result is [n_segments, H*C].
    Segments without rows produce zero rows.
    """
    seg = np.asarray(segments, dtype=np.int64)
    E, HC = messages.shape
    H = weights.shape[1]
    if weights.shape[0] != E or HC % H:
        raise ShapeMismatch(f"messages {messages.shape} vs weights {weights.shape}")
    C = HC // H
    m3 = messages.data.reshape(E, H, C)
    w3 = weights.data[:, :, None]
    out = np.zeros((n_segments, H, C), dtype=messages.data.dtype)
    np.add.at(out, seg, m3 * w3)

    def backward(g):
        g3 = g.reshape(n_segments, H, C)[seg]
        return ((g3 * w3).reshape(E, HC), (g3 * m3).sum(axis=2))

    return _result(out.reshape(n_segments, HC), (messages, weights), backward)


def head_dot(x: Tensor, a: Tensor) -> Tensor:
    """Per-head inner product: x [E, H*C] with a [H, C] -> [E, H]."""
    H, C = a.shape
    if x.shape[1] != H * C:
        raise ShapeMismatch(f"head_dot: {x.shape} vs {a.shape}")
    x3 = x.data.reshape(-1, H, C)

    def backward(g):
        return ((g[:, :, None] * a.data[None]).reshape(x.shape), (g[:, :, None] * x3).sum(axis=0))

    return _result((x3 * a.data[None]).sum(axis=2), (x, a), backward)


def mse_loss(pred: Tensor, target) -> Tensor:
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse_loss: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    value = np.array([[np.mean(diff.astype(np.float64) ** 2)]], dtype=pred.data.dtype)

    def backward(g):
        c = g.reshape(-1)[0] * 2.0 / n
        return ((diff * c).astype(pred.data.dtype), (-diff * c).astype(target.data.dtype))

    return _result(value, (pred, target), backward)
