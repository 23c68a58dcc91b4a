"""Dense tensors and a reverse-mode differentiation tape.

Everything downstream (scan kernels, blocks, the full network) is built
from the primitives in this file.  Tensors wrap contiguous numpy arrays;
gradients are recorded on an explicit tape and replayed in exact reverse
order.  Default precision is float32; a float64 mode exists for finite
difference gradient checking (see `precision`).
"""

from __future__ import annotations

import contextlib
import math

import numpy as np

_DEFAULT_DTYPE = np.float32


def default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def precision(mode: str):
    """Temporarily switch the default scalar precision.

    mode: "float32" or "float64".  Only affects tensors created inside the
    context; intermediates follow their inputs' dtype.
    """
    global _DEFAULT_DTYPE
    if mode not in ("float32", "float64"):
        raise ValueError(f"unknown precision mode {mode!r}")
    prev = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.float32 if mode == "float32" else np.float64
    try:
        yield
    finally:
        _DEFAULT_DTYPE = prev


class ShapeError(ValueError):
    """Structured dimension mismatch, names the offending axis."""


_TAPE_STACK: list["Tape"] = []


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tape:
    """Ordered record of differentiable operations.

    Single-owner: record and backward happen on one logical thread.  The
    backward pass visits entries in exact reverse recording order, which
    guarantees every node's output gradient is complete before its own
    backward function runs.
    """

    def __init__(self):
        self._entries = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False

    def record(self, out, backward_fn):
        self._entries.append((out, backward_fn))

    def backward(self, loss: "Tensor"):
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not self._entries:
            raise RuntimeError("backward on an empty tape")
        loss.grad = np.ones_like(loss.data)
        for out, backward_fn in reversed(self._entries):
            if out.grad is None:
                continue
            backward_fn(out.grad)


class Tensor:
    """Dense n-dimensional array, optionally tracked on the active tape."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.ascontiguousarray(data, dtype=_DEFAULT_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; constants stay plain scalars/arrays
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _from_op(data, inputs, backward_fn) -> Tensor:
    """Wrap an op result; record on the active tape when any input is tracked."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, backward_fn)
    return out


def _accum(t: Tensor, g):
    if not t.requires_grad:
        return
    g = _unbroadcast(g, t.data.shape)
    # grads are never mutated in place, so sharing buffers here is safe
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    data = a.data + b.data

    def backward(g):
        _accum(a, g)
        _accum(b, g)

    return _from_op(data, (a, b), backward)


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    data = a.data - b.data

    def backward(g):
        _accum(a, g)
        _accum(b, -g)

    return _from_op(data, (a, b), backward)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    data = a.data * b.data

    def backward(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _from_op(data, (a, b), backward)


def neg(a):
    a = _wrap(a)

    def backward(g):
        _accum(a, -g)

    return _from_op(-a.data, (a,), backward)


def exp(a):
    a = _wrap(a)
    data = np.exp(a.data)

    def backward(g):
        _accum(a, g * data)

    return _from_op(data, (a,), backward)


def sigmoid(a):
    a = _wrap(a)
    data = _sigmoid(a.data)

    def backward(g):
        _accum(a, g * data * (1.0 - data))

    return _from_op(data, (a,), backward)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def silu(a):
    """x * sigmoid(x), elementwise."""
    a = _wrap(a)
    s = _sigmoid(a.data)
    data = a.data * s

    def backward(g):
        _accum(a, g * (s + a.data * s * (1.0 - s)))

    return _from_op(data, (a,), backward)


def softplus(a):
    a = _wrap(a)
    x = a.data
    data = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def backward(g):
        _accum(a, g * _sigmoid(x))

    return _from_op(data, (a,), backward)


def absolute(a):
    a = _wrap(a)
    data = np.abs(a.data)

    def backward(g):
        _accum(a, g * np.sign(a.data))

    return _from_op(data, (a,), backward)


# ---------------------------------------------------------------------------
# reductions / shape ops


def tsum(a, axis=None, keepdims=False):
    a = _wrap(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        _accum(a, np.broadcast_to(gg, a.data.shape))

    return _from_op(np.asarray(data), (a,), backward)


def tmean(a, axis=None, keepdims=False):
    a = _wrap(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    data = a.data.mean(axis=axis, keepdims=keepdims)

    def backward(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        _accum(a, np.broadcast_to(gg, a.data.shape) / n)

    return _from_op(np.asarray(data), (a,), backward)


def reshape(a, shape):
    a = _wrap(a)
    old = a.data.shape
    data = a.data.reshape(shape)

    def backward(g):
        _accum(a, g.reshape(old))

    return _from_op(data, (a,), backward)


def transpose(a, axes):
    a = _wrap(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    data = np.ascontiguousarray(a.data.transpose(axes))

    def backward(g):
        _accum(a, g.transpose(inv))

    return _from_op(data, (a,), backward)


def concat(tensors, axis):
    tensors = [_wrap(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return _from_op(data, tuple(tensors), backward)


def permute_axis(a, perm, axis):
    """Reorder `a` along `axis` by the bijection `perm` (out[i] = in[perm[i]])."""
    a = _wrap(a)
    perm = np.asarray(perm)
    if perm.shape != (a.data.shape[axis],):
        raise ShapeError(
            f"permutation length {perm.shape} does not match axis {axis} of {a.shape}"
        )
    inv = np.argsort(perm)
    data = np.take(a.data, perm, axis=axis)

    def backward(g):
        _accum(a, np.take(g, inv, axis=axis))

    return _from_op(data, (a,), backward)


def upsample_nearest2x(a):
    """Nearest-neighbor 2x upsampling of a [B, C, H, W] map."""
    a = _wrap(a)
    data = a.data.repeat(2, axis=2).repeat(2, axis=3)

    def backward(g):
        b, c, h2, w2 = g.shape
        gg = g.reshape(b, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5))
        _accum(a, gg)

    return _from_op(data, (a,), backward)


# ---------------------------------------------------------------------------
# linear maps


def linear_last(x, w, b=None):
    """Affine map over the last axis: y[..., o] = sum_i x[..., i] w[o, i] + b[o]."""
    x, w = _wrap(x), _wrap(w)
    if x.data.shape[-1] != w.data.shape[1]:
        raise ShapeError(
            f"last axis of input ({x.data.shape[-1]}) != weight fan-in ({w.data.shape[1]})"
        )
    data = x.data @ w.data.T
    if b is not None:
        b = _wrap(b)
        data = data + b.data

    def backward(g):
        _accum(x, g @ w.data)
        gflat = g.reshape(-1, g.shape[-1])
        _accum(w, gflat.T @ x.data.reshape(-1, x.data.shape[-1]))
        if b is not None:
            _accum(b, gflat.sum(axis=0))

    inputs = (x, w) if b is None else (x, w, b)
    return _from_op(data, inputs, backward)


def conv2d(x, w, b=None, stride=1, padding=0, groups=1):
    """2D convolution on [B, Cin, H, W] with weight [Cout, Cin/groups, k, k].

    Zero padding.  H' = floor((H + 2*padding - k)/stride) + 1, same for W'.
    """
    x, w = _wrap(x), _wrap(w)
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d input must be 4D [B,C,H,W], got {x.shape}")
    bsz, cin, h, wd = x.data.shape
    cout, cin_g, kh, kw = w.data.shape
    if kh != kw:
        raise ShapeError(f"square kernels only, got {kh}x{kw}")
    k = kh
    if cin % groups != 0 or cout % groups != 0:
        raise ShapeError(f"channels ({cin}->{cout}) not divisible by groups={groups}")
    if cin_g != cin // groups:
        raise ShapeError(
            f"weight fan-in axis is {cin_g}, expected Cin/groups = {cin // groups}"
        )
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"kernel {k} does not fit input {h}x{wd} with padding {padding}")

    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))

    og = cout // groups
    xg = xp.reshape(bsz, groups, cin_g, *xp.shape[2:])
    w_mat = w.data.reshape(groups, og, cin_g * k * k)

    # im2col: [G, cg*k*k, B*Ho*Wo], then one batched matmul per direction
    cols = np.empty((groups, cin_g, k, k, bsz, ho, wo), dtype=x.data.dtype)
    for i in range(k):
        for j in range(k):
            patch = xg[:, :, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
            cols[:, :, i, j] = patch.transpose(1, 2, 0, 3, 4)
    cols = cols.reshape(groups, cin_g * k * k, bsz * ho * wo)

    data = (w_mat @ cols).reshape(groups, og, bsz, ho, wo)
    data = np.ascontiguousarray(data.transpose(2, 0, 1, 3, 4)).reshape(bsz, cout, ho, wo)
    if b is not None:
        b = _wrap(b)
        if b.data.shape != (cout,):
            raise ShapeError(f"bias shape {b.shape} != ({cout},)")
        data = data + b.data[None, :, None, None]

    def backward(g):
        gg = np.ascontiguousarray(
            g.reshape(bsz, groups, og, ho, wo).transpose(1, 2, 0, 3, 4)
        ).reshape(groups, og, bsz * ho * wo)
        if w.requires_grad:
            gw = gg @ cols.transpose(0, 2, 1)
            _accum(w, gw.reshape(w.data.shape))
        if x.requires_grad:
            dcols = (w_mat.transpose(0, 2, 1) @ gg).reshape(
                groups, cin_g, k, k, bsz, ho, wo
            )
            gxp = np.zeros(
                (bsz, groups, cin_g, h + 2 * padding, wd + 2 * padding),
                dtype=x.data.dtype,
            )
            for i in range(k):
                for j in range(k):
                    gxp[
                        :, :, :, i : i + stride * ho : stride, j : j + stride * wo : stride
                    ] += dcols[:, :, i, j].transpose(2, 0, 1, 3, 4)
            gx = gxp.reshape(bsz, cin, h + 2 * padding, wd + 2 * padding)
            if padding:
                gx = gx[:, :, padding:-padding, padding:-padding]
            _accum(x, gx)
        if b is not None:
            _accum(b, g.sum(axis=(0, 2, 3)))

    inputs = (x, w) if b is None else (x, w, b)
    return _from_op(data, inputs, backward)


def layer_norm(x, gamma, beta, eps=1e-5, axis=1):
    """Layer normalization over the channel axis at every position.

    x is typically [B, C, H, W] with axis=1; gamma/beta are length-C vectors.
    """
    x, gamma, beta = _wrap(x), _wrap(gamma), _wrap(beta)
    c = x.data.shape[axis]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(
            f"gamma/beta must have shape ({c},), got {gamma.shape} and {beta.shape}"
        )
    bshape = [1] * x.data.ndim
    bshape[axis] = c
    gb = gamma.data.reshape(bshape)
    bb = beta.data.reshape(bshape)

    mu = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = gb * xhat + bb

    def backward(g):
        red = tuple(i for i in range(g.ndim) if i != axis)
        _accum(gamma, (g * xhat).sum(axis=red))
        _accum(beta, g.sum(axis=red))
        if x.requires_grad:
            gxh = g * gb
            m1 = gxh.mean(axis=axis, keepdims=True)
            m2 = (gxh * xhat).mean(axis=axis, keepdims=True)
            _accum(x, inv * (gxh - m1 - xhat * m2))

    return _from_op(data, (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# initialization

def kaiming_uniform(rng, shape, fan_in):
    """Kaiming-uniform fan-in init, returned as a plain numpy array."""
    bound = math.sqrt(3.0) / math.sqrt(fan_in) if fan_in > 0 else 0.0
    return rng.uniform(-bound, bound, size=shape)
