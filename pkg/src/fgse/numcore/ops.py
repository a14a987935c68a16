"""Differentiable operations over :class:`Tensor`.

Every function computes its forward result with numpy in float32 and, when a
tape is active, records a closure mapping the output gradient to one gradient
per input.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy import sparse

from .tensor import DTYPE, Tensor, as_tensor, compute_dtype, record

SELU_ALPHA = 1.6732632423543772848170429916717
SELU_SCALE = 1.0507009873554804934193349852946


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class KinkLog:
    """Collects sign patterns at non-differentiable points while active.

    Gradient checking uses it to spot finite-difference steps that cross a
    kink, where a central difference does not estimate the derivative.
    """

    active: list | None = None

    def __enter__(self):
        self.patterns: list[bytes] = []
        KinkLog.active = self.patterns
        return self

    def __exit__(self, *exc):
        KinkLog.active = None

    def signature(self) -> bytes:
        return b"".join(self.patterns)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return record("add", (a, b), out,
                  lambda g: (_unbroadcast(g, a.shape) if a.requires_grad else None,
                             _unbroadcast(g, b.shape) if b.requires_grad else None))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    return record("sub", (a, b), out,
                  lambda g: (_unbroadcast(g, a.shape) if a.requires_grad else None,
                             _unbroadcast(-g, b.shape) if b.requires_grad else None))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    return record("mul", (a, b), out,
                  lambda g: (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                             _unbroadcast(g * a.data, b.shape) if b.requires_grad else None))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return record("div", (a, b), out, backward)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return record("exp", (x,), out, lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    out = np.log(x.data)
    return record("log", (x,), out, lambda g: (g / x.data,))


def selu(x: Tensor) -> Tensor:
    """Scaled exponential linear unit with the self-normalizing constants."""
    pos = x.data > 0
    if KinkLog.active is not None:
        KinkLog.active.append(np.packbits(pos).tobytes())
    neg_part = SELU_SCALE * SELU_ALPHA * np.expm1(np.minimum(x.data, 0.0))
    out = np.where(pos, SELU_SCALE * x.data, neg_part).astype(compute_dtype(), copy=False)

    def backward(g):
        d = np.where(pos, SELU_SCALE, neg_part + SELU_SCALE * SELU_ALPHA)
        return (g * d,)

    return record("selu", (x,), out, backward)


# ------------------------------------------------------------------ products

def matmul(a, b) -> Tensor:
    """Matrix product with numpy broadcasting over leading (batch) axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    if b.ndim == 2 and a.ndim > 2:
        # one BLAS call over the flattened batch; numpy loops per item otherwise
        out = (a.data.reshape(-1, a.shape[-1]) @ b.data).reshape(a.shape[:-1] + (b.shape[-1],))
    else:
        out = np.matmul(a.data, b.data)

    def backward(g):
        ga = gb = None
        if b.ndim == 2:
            if a.requires_grad:
                ga = (g.reshape(-1, g.shape[-1]) @ b.data.T).reshape(a.shape)
            if b.requires_grad:
                k = a.shape[-1]
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, b.shape[-1])
        else:
            if a.requires_grad:
                ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            if b.requires_grad:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return (None if ga is None else _unbroadcast(ga, a.shape),
                None if gb is None else _unbroadcast(gb, b.shape))

    return record("matmul", (a, b), out, backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as (in, out)."""
    y = matmul(x, weight)
    return add(y, bias) if bias is not None else y


# ----------------------------------------------------------------- reductions

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return record("sum", (x,), np.asarray(out, dtype=compute_dtype()), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([x.shape[a] for a in axes]))
    out = np.mean(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape),)

    return record("mean", (x,), np.asarray(out, dtype=compute_dtype()), backward)


# ------------------------------------------------------------ normalization

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Softmax along ``axis``, stabilised by subtracting the running max."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return record("softmax", (x,), out, backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return record("log_softmax", (x,), out, backward)


def cross_entropy(logits: Tensor, target) -> Tensor:
    """Mean of ``-log softmax(logits)[target]`` over all leading positions.

    ``logits`` has classes on the last axis; ``target`` is an int or an int
    array matching the leading shape.
    """
    c = logits.shape[-1]
    target = np.asarray(target, dtype=np.int64)
    if target.shape != logits.shape[:-1]:
        raise ShapeError(f"cross_entropy: target shape {target.shape} vs logits {logits.shape}")
    if target.size and (target.min() < 0 or target.max() >= c):
        raise IndexError(f"cross_entropy: target out of range for {c} classes")
    # the reduction is accumulated in float64; the result is stored as float32
    flat = logits.data.reshape(-1, c).astype(np.float64)
    t = target.reshape(-1)
    n = max(len(t), 1)
    shifted = flat - flat.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(len(t)), t]
    out = np.asarray((lse - picked).sum() / n, dtype=compute_dtype())

    def backward(g):
        p = np.exp(shifted - lse[:, None])
        p[np.arange(len(t)), t] -= 1.0
        return ((p * (float(g) / n)).astype(DTYPE).reshape(logits.shape),)

    return record("cross_entropy", (logits,), out, backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then scale and shift."""
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias {gain.shape}/{bias.shape} vs width {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        gxhat = g * gain.data
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(x.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return record("layer_norm", (x, gain, bias), out.astype(compute_dtype(), copy=False), backward)


# ------------------------------------------------------------------- shaping

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = x.data.reshape(shape)
    return record("reshape", (x,), out, lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))
    out = np.transpose(x.data, axes)
    return record("transpose", (x,), out, lambda g: (np.transpose(g, inverse),))


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    out = np.concatenate([t.data for t in xs], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return record("concat", xs, out, backward)


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    out = np.stack([t.data for t in xs], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(xs)))

    return record("stack", xs, out, backward)


# -------------------------------------------------------- gather / segments

class Segments:
    """Grouping of rows by an integer id in ``[0, n)``, for segment reductions.

    Sums go through a sparse indicator matrix; other reductions sort rows by
    id once and use ``np.*.reduceat``. Both are far cheaper than ``np.add.at``.
    """

    __slots__ = ("ids", "n", "order", "starts", "present", "counts", "_matrix")

    def __init__(self, ids, n: int):
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        if ids.size and (ids.min() < 0 or ids.max() >= n):
            raise IndexError(f"segment ids out of range [0, {n})")
        self.ids = ids
        self.n = n
        self.order = np.argsort(ids, kind="stable")
        sorted_ids = ids[self.order]
        if ids.size:
            boundary = np.flatnonzero(np.diff(sorted_ids)) + 1
            self.starts = np.concatenate([[0], boundary])
            self.present = sorted_ids[self.starts]
        else:
            self.starts = np.zeros(0, dtype=np.int64)
            self.present = np.zeros(0, dtype=np.int64)
        self.counts = np.bincount(ids, minlength=n)
        self._matrix = None

    def matrix(self) -> sparse.csr_matrix:
        if self._matrix is None:
            m = self.ids.size
            self._matrix = sparse.csr_matrix((np.ones(m, dtype=DTYPE), (self.ids, np.arange(m))),
                                             shape=(self.n, m))
        return self._matrix

    def reduce(self, values: np.ndarray, ufunc=np.add, fill=0.0) -> np.ndarray:
        if ufunc is np.add and fill == 0.0 and values.shape[0]:
            flat = values.reshape(values.shape[0], -1)
            return np.asarray(self.matrix() @ flat, dtype=values.dtype).reshape((self.n,) + values.shape[1:])
        out = np.full((self.n,) + values.shape[1:], fill, dtype=values.dtype)
        if self.starts.size:
            out[self.present] = ufunc.reduceat(values[self.order], self.starts, axis=0)
        return out


def index_select(x: Tensor, idx, segments: Segments | None = None) -> Tensor:
    """Rows ``x[idx]``; the backward pass scatter-adds into ``x``."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise IndexError(f"index_select: index out of range for {x.shape[0]} rows")
    out = x.data[idx]

    def backward(g):
        seg = segments if segments is not None else Segments(idx, x.shape[0])
        return (seg.reduce(g),)

    return record("index_select", (x,), out, backward)


def segment_sum(x: Tensor, segments: Segments) -> Tensor:
    """Sum rows of ``x`` sharing a segment id; empty segments give zeros."""
    out = segments.reduce(x.data)
    return record("segment_sum", (x,), out, lambda g: (g[segments.ids],))


def segment_softmax(x: Tensor, segments: Segments) -> Tensor:
    """Softmax over the rows of each segment, independently per column."""
    seg_max = segments.reduce(x.data, np.maximum, fill=-np.inf)
    e = np.exp(x.data - seg_max[segments.ids])
    denom = segments.reduce(e)
    out = e / denom[segments.ids]

    def backward(g):
        dot = segments.reduce(g * out)
        return (out * (g - dot[segments.ids]),)

    return record("segment_softmax", (x,), out, backward)
