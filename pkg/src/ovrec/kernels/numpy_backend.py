"""Pure-numpy convolution kernels (im2col + BLAS matmul)."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_out_size(size: int, k: int, stride: int, dilation: int, pad: int) -> int:
    eff = dilation * (k - 1) + 1
    return (size + 2 * pad - eff) // stride + 1


def _pad(x, pad):
    if pad == 0:
        return x
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    xp[:, :, pad:pad + h, pad:pad + w] = x
    return xp


def _im2col(x, kh, kw, stride, dilation, pad, oh, ow):
    # returns (N*OH*OW, C*KH*KW), C-order over (c, ky, kx)
    n, c, h, w = x.shape
    xp = _pad(x, pad)
    if kh * kw > 9:
        # one big gather beats per-offset slicing for large kernels
        win = sliding_window_view(xp, ((kh - 1) * dilation + 1,
                                       (kw - 1) * dilation + 1), axis=(2, 3))
        win = win[:, :, ::stride, ::stride, ::dilation, ::dilation]
        return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    cols = np.empty((n, oh, ow, c, kh, kw), dtype=x.dtype)
    for ky in range(kh):
        y0 = ky * dilation
        for kx in range(kw):
            x0 = kx * dilation
            patch = xp[:, :, y0:y0 + (oh - 1) * stride + 1:stride,
                       x0:x0 + (ow - 1) * stride + 1:stride]
            cols[:, :, :, :, ky, kx] = patch.transpose(0, 2, 3, 1)
    return cols.reshape(n * oh * ow, c * kh * kw)


def conv2d_fwd_ex(x, w, stride, dilation, pad):
    """Forward conv returning (y, ctx); ctx carries the im2col columns so
    the weight gradient can reuse them."""
    n, c, h, wd = x.shape
    oc, _, kh, kw = w.shape
    oh = conv_out_size(h, kh, stride, dilation, pad)
    ow = conv_out_size(wd, kw, stride, dilation, pad)
    cols = _im2col(x, kh, kw, stride, dilation, pad, oh, ow)
    y = cols @ w.reshape(oc, -1).T
    return y.reshape(n, oh, ow, oc).transpose(0, 3, 1, 2).copy(), cols


def conv2d_fwd(x, w, stride, dilation, pad):
    return conv2d_fwd_ex(x, w, stride, dilation, pad)[0]


def conv2d_bwd_w_ex(gy, ctx, x, kh, kw, stride, dilation, pad):
    n, oc, oh, ow = gy.shape
    c = x.shape[1]
    cols = ctx if ctx is not None else \
        _im2col(x, kh, kw, stride, dilation, pad, oh, ow)
    g2 = gy.transpose(0, 2, 3, 1).reshape(n * oh * ow, oc)
    return (g2.T @ cols).reshape(oc, c, kh, kw)


def conv2d_bwd_w(gy, x, kh, kw, stride, dilation, pad):
    return conv2d_bwd_w_ex(gy, None, x, kh, kw, stride, dilation, pad)


def _bwd_x_scatter(gy, w, h, wd, stride, dilation, pad):
    n, oc, oh, ow = gy.shape
    _, c, kh, kw = w.shape
    g2 = gy.transpose(0, 2, 3, 1).reshape(n * oh * ow, oc)
    gcols = (g2 @ w.reshape(oc, -1)).reshape(n, oh, ow, c, kh, kw)
    gcols = gcols.transpose(0, 3, 1, 2, 4, 5)  # (n, c, oh, ow, kh, kw)
    gxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=gy.dtype)
    for ky in range(kh):
        y0 = ky * dilation
        for kx in range(kw):
            x0 = kx * dilation
            gxp[:, :, y0:y0 + (oh - 1) * stride + 1:stride,
                x0:x0 + (ow - 1) * stride + 1:stride] += gcols[:, :, :, :, ky, kx]
    if pad > 0:
        return gxp[:, :, pad:pad + h, pad:pad + wd].copy()
    return gxp


def conv2d_bwd_x(gy, w, h, wd, stride, dilation, pad):
    # input gradient as a transposed conv: flip the kernel spatially, swap
    # in/out channels, zero-dilate gy for stride > 1, then reuse the fast
    # forward path; right-side padding absorbs the non-divisible remainder
    n, oc, oh, ow = gy.shape
    _, c, kh, kw = w.shape
    ph = dilation * (kh - 1) - pad
    pw = dilation * (kw - 1) - pad
    if ph < 0 or pw < 0 or stride > 1 or kh * kw <= 9:
        # the offset-scatter GEMM wins for small kernels; zero-dilating gy
        # for stride > 1 would inflate the transposed conv's work
        return _bwd_x_scatter(gy, w, h, wd, stride, dilation, pad)
    rh = (h + 2 * pad - dilation * (kh - 1) - 1) % stride
    rw = (wd + 2 * pad - dilation * (kw - 1) - 1) % stride
    wt = np.ascontiguousarray(w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
    gh = (oh - 1) * stride + 1
    gw = (ow - 1) * stride + 1
    g = np.zeros((n, oc, gh + 2 * ph + rh, gw + 2 * pw + rw), dtype=gy.dtype)
    g[:, :, ph:ph + gh:stride, pw:pw + gw:stride] = gy
    return conv2d_fwd(g, wt, 1, dilation, 0)
