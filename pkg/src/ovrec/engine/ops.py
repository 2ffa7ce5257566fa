"""Differentiable primitives used to assemble networks and losses."""

import numpy as np

from .. import kernels
from .tensor import Tensor, grad_enabled


def _make(data, parents, backward_fn):
    if not grad_enabled():
        return Tensor(data)
    req = any(p.requires_grad for p in parents)
    if not req:
        return Tensor(data)
    return Tensor(data, requires_grad=True, parents=parents, backward_fn=backward_fn)


def constant(arr, dtype=None) -> Tensor:
    a = np.asarray(arr)
    if dtype is not None:
        a = a.astype(dtype, copy=False)
    return Tensor(a)


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride=1, dilation=1, pad=0) -> Tensor:
    if not grad_enabled():
        y = kernels.conv2d_fwd(x.data, w.data, stride, dilation, pad)
        y += b.data.reshape(1, -1, 1, 1)
        return Tensor(y)
    y, ctx = kernels.conv2d_fwd_ex(x.data, w.data, stride, dilation, pad)
    y += b.data.reshape(1, -1, 1, 1)
    h, wd = x.data.shape[2], x.data.shape[3]
    kh, kw = w.data.shape[2], w.data.shape[3]

    def backward(g):
        if x.requires_grad:
            x.accumulate(kernels.conv2d_bwd_x(g, w.data, h, wd, stride, dilation, pad))
        if w.requires_grad:
            w.accumulate(kernels.conv2d_bwd_w_ex(g, ctx, x.data, kh, kw,
                                                 stride, dilation, pad))
        if b.requires_grad:
            b.accumulate(g.sum(axis=(0, 2, 3)))

    return _make(y, (x, w, b), backward)


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    y = x.data @ w.data + b.data

    def backward(g):
        if x.requires_grad:
            x.accumulate(g @ w.data.T)
        if w.requires_grad:
            w.accumulate(x.data.T @ g)
        if b.requires_grad:
            b.accumulate(g.sum(axis=0))

    return _make(y, (x, w, b), backward)


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps=1e-5) -> Tensor:
    # normalizes each (sample, channel) plane over its spatial extent
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    var = x.data.var(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    gm = gamma.data.reshape(1, -1, 1, 1)
    y = gm * xhat + beta.data.reshape(1, -1, 1, 1)

    def backward(g):
        if gamma.requires_grad:
            gamma.accumulate((g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            beta.accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gh = g * gm
            m1 = gh.mean(axis=(2, 3), keepdims=True)
            m2 = (gh * xhat).mean(axis=(2, 3), keepdims=True)
            x.accumulate(inv * (gh - m1 - xhat * m2))

    return _make(y, (x, gamma, beta), backward)


def leaky_relu(x: Tensor, slope=0.2) -> Tensor:
    pos = x.data > 0
    y = np.where(pos, x.data, x.data * slope)

    def backward(g):
        x.accumulate(np.where(pos, g, g * slope))

    return _make(y, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    y = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                 np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    y = y.astype(d.dtype, copy=False)

    def backward(g):
        x.accumulate(g * y * (1.0 - y))

    return _make(y, (x,), backward)


def softplus(x: Tensor) -> Tensor:
    d = x.data
    y = np.maximum(d, 0) + np.log1p(np.exp(-np.abs(d)))

    def backward(g):
        sig = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                       np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
        x.accumulate(g * sig)

    return _make(y, (x,), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    y = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(g)

    return _make(y, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    y = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(-g)

    return _make(y, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    y = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * b.data)
        if b.requires_grad:
            b.accumulate(g * a.data)

    return _make(y, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    y = a.data * s

    def backward(g):
        a.accumulate(g * s)

    return _make(y, (a,), backward)


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def abs_(a: Tensor) -> Tensor:
    y = np.abs(a.data)

    def backward(g):
        a.accumulate(g * np.sign(a.data))

    return _make(y, (a,), backward)


def mean_all(a: Tensor) -> Tensor:
    y = np.asarray(a.data.mean(), dtype=a.data.dtype)
    n = a.data.size

    def backward(g):
        a.accumulate(np.full(a.data.shape, float(g) / n, dtype=a.data.dtype))

    return _make(y, (a,), backward)


def sum_all(a: Tensor) -> Tensor:
    y = np.asarray(a.data.sum(), dtype=a.data.dtype)

    def backward(g):
        a.accumulate(np.full(a.data.shape, float(g), dtype=a.data.dtype))

    return _make(y, (a,), backward)


def mean_spatial(a: Tensor) -> Tensor:
    # (N,C,H,W) -> (N,C); global average pooling
    n, c, h, w = a.data.shape
    y = a.data.mean(axis=(2, 3))

    def backward(g):
        a.accumulate(np.broadcast_to(g[:, :, None, None] / (h * w),
                                     a.data.shape).astype(a.data.dtype))

    return _make(y, (a,), backward)


def upsample2x(a: Tensor) -> Tensor:
    # nearest-neighbor x2
    y = a.data.repeat(2, axis=2).repeat(2, axis=3)
    n, c, h, w = a.data.shape

    def backward(g):
        a.accumulate(g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)))

    return _make(y, (a,), backward)


def concat_channels(parts) -> Tensor:
    y = np.concatenate([p.data for p in parts], axis=1)
    sizes = [p.data.shape[1] for p in parts]

    def backward(g):
        off = 0
        for p, c in zip(parts, sizes):
            if p.requires_grad:
                p.accumulate(g[:, off:off + c])
            off += c

    return _make(y, tuple(parts), backward)


def concat_rows(parts) -> Tensor:
    y = np.concatenate([p.data for p in parts], axis=0)
    sizes = [p.data.shape[0] for p in parts]

    def backward(g):
        off = 0
        for p, n in zip(parts, sizes):
            if p.requires_grad:
                p.accumulate(g[off:off + n])
            off += n

    return _make(y, tuple(parts), backward)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    y = a.data[start:stop]

    def backward(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        a.accumulate(full)

    return _make(y, (a,), backward)


def flatten2(a: Tensor) -> Tensor:
    n = a.data.shape[0]
    y = a.data.reshape(n, -1)

    def backward(g):
        a.accumulate(g.reshape(a.data.shape))

    return _make(y, (a,), backward)


def log_softmax(a: Tensor) -> Tensor:
    # (N,K)
    m = a.data.max(axis=1, keepdims=True)
    z = a.data - m
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    y = z - lse

    def backward(g):
        p = np.exp(y)
        a.accumulate(g - p * g.sum(axis=1, keepdims=True))

    return _make(y, (a,), backward)


def nll_loss(logp: Tensor, labels) -> Tensor:
    labels = np.asarray(labels)
    n = logp.data.shape[0]
    y = np.asarray(-logp.data[np.arange(n), labels].mean(), dtype=logp.data.dtype)

    def backward(g):
        gl = np.zeros_like(logp.data)
        gl[np.arange(n), labels] = -float(g) / n
        logp.accumulate(gl)

    return _make(y, (logp,), backward)


def mean_l1(a: Tensor, b: Tensor) -> Tensor:
    return mean_all(abs_(sub(a, b)))


def masked_mean(a: Tensor, mask: np.ndarray) -> Tensor:
    """Mean of `a` over entries where `mask` (a constant, broadcastable) is 1."""
    total = float(np.broadcast_to(mask, a.data.shape).sum())
    if total == 0:
        raise ValueError("masked_mean over an empty region")
    m = constant(np.broadcast_to(mask, a.data.shape).astype(a.data.dtype))
    return scale(sum_all(mul(a, m)), 1.0 / total)
