"""Numba-jitted convolution kernels (direct loops, parallel over independent outputs).

Every prange iteration owns a disjoint output slice, so results are
independent of the thread count.
"""

import numpy as np
from numba import njit, prange

from .numpy_backend import conv_out_size


@njit(parallel=True, cache=True)
def _fwd(x, w, y, stride, dilation, pad):
    n, c, h, wd = x.shape
    oc, _, kh, kw = w.shape
    oh, ow = y.shape[2], y.shape[3]
    for no in prange(n * oc):
        i = no // oc
        o = no % oc
        for oy in range(oh):
            iy0 = oy * stride - pad
            for ox in range(ow):
                ix0 = ox * stride - pad
                acc = 0.0
                for ci in range(c):
                    for ky in range(kh):
                        iy = iy0 + ky * dilation
                        if iy < 0 or iy >= h:
                            continue
                        for kx in range(kw):
                            ix = ix0 + kx * dilation
                            if ix < 0 or ix >= wd:
                                continue
                            acc += x[i, ci, iy, ix] * w[o, ci, ky, kx]
                y[i, o, oy, ox] = acc


@njit(parallel=True, cache=True)
def _bwd_x(gy, w, gx, stride, dilation, pad):
    n, oc, oh, ow = gy.shape
    _, c, kh, kw = w.shape
    h, wd = gx.shape[2], gx.shape[3]
    for nc in prange(n * c):
        i = nc // c
        ci = nc % c
        for iy in range(h):
            for ix in range(wd):
                acc = 0.0
                for ky in range(kh):
                    ynum = iy + pad - ky * dilation
                    if ynum < 0 or ynum % stride != 0:
                        continue
                    oy = ynum // stride
                    if oy >= oh:
                        continue
                    for kx in range(kw):
                        xnum = ix + pad - kx * dilation
                        if xnum < 0 or xnum % stride != 0:
                            continue
                        ox = xnum // stride
                        if ox >= ow:
                            continue
                        for o in range(oc):
                            acc += gy[i, o, oy, ox] * w[o, ci, ky, kx]
                gx[i, ci, iy, ix] = acc


@njit(parallel=True, cache=True)
def _bwd_w(gy, x, gw, stride, dilation, pad):
    n, oc, oh, ow = gy.shape
    _, c, h, wd = x.shape
    kh, kw = gw.shape[2], gw.shape[3]
    for o in prange(oc):
        for ci in range(c):
            for ky in range(kh):
                for kx in range(kw):
                    acc = 0.0
                    for i in range(n):
                        for oy in range(oh):
                            iy = oy * stride - pad + ky * dilation
                            if iy < 0 or iy >= h:
                                continue
                            for ox in range(ow):
                                ix = ox * stride - pad + kx * dilation
                                if ix < 0 or ix >= wd:
                                    continue
                                acc += gy[i, o, oy, ox] * x[i, ci, iy, ix]
                    gw[o, ci, ky, kx] = acc


def conv2d_fwd(x, w, stride, dilation, pad):
    n, _, h, wd = x.shape
    oc, _, kh, kw = w.shape
    oh = conv_out_size(h, kh, stride, dilation, pad)
    ow = conv_out_size(wd, kw, stride, dilation, pad)
    y = np.empty((n, oc, oh, ow), dtype=x.dtype)
    _fwd(x, w, y, stride, dilation, pad)
    return y


def conv2d_fwd_ex(x, w, stride, dilation, pad):
    # direct loops keep no reusable context
    return conv2d_fwd(x, w, stride, dilation, pad), None


def conv2d_bwd_x(gy, w, h, wd, stride, dilation, pad):
    n = gy.shape[0]
    c = w.shape[1]
    gx = np.empty((n, c, h, wd), dtype=gy.dtype)
    _bwd_x(np.ascontiguousarray(gy), w, gx, stride, dilation, pad)
    return gx


def conv2d_bwd_w(gy, x, kh, kw, stride, dilation, pad):
    oc = gy.shape[1]
    c = x.shape[1]
    gw = np.empty((oc, c, kh, kw), dtype=gy.dtype)
    _bwd_w(np.ascontiguousarray(gy), x, gw, stride, dilation, pad)
    return gw


def conv2d_bwd_w_ex(gy, ctx, x, kh, kw, stride, dilation, pad):
    return conv2d_bwd_w(gy, x, kh, kw, stride, dilation, pad)
