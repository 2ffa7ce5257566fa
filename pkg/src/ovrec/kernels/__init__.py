"""Convolution kernel backends.

Two interchangeable implementations of the conv2d forward/backward kernels:

* ``numpy`` -- im2col plus a BLAS matmul (the default: on typical multicore
  boxes BLAS wins by a wide margin for these shapes, see
  ``benchmarks/bench_kernels.py``)
* ``numba`` -- direct @njit loops, parallel over disjoint output slices

Select with the ``OVREC_KERNELS`` environment variable (``numpy`` or
``numba``), or at runtime with :func:`set_backend`. Both produce the same
results up to float rounding; within one backend results are bit-reproducible
and independent of thread count.
"""

import os

from . import numpy_backend
from .numpy_backend import conv_out_size

_BACKENDS = {"numpy": numpy_backend}

try:
    from . import numba_backend
    _BACKENDS["numba"] = numba_backend
except ImportError:  # numba missing: numpy path remains available
    numba_backend = None

_active_name = os.environ.get("OVREC_KERNELS", "numpy")


def available_backends():
    return sorted(_BACKENDS)


def set_backend(name: str) -> None:
    global _active_name
    if name not in _BACKENDS:
        raise ValueError(
            f"unknown kernel backend {name!r}; available: {available_backends()}")
    _active_name = name


def get_backend() -> str:
    return _active_name


if _active_name not in _BACKENDS:
    raise ImportError(
        f"OVREC_KERNELS={_active_name!r} is not available; "
        f"choices: {sorted(_BACKENDS)}")


def conv2d_fwd(x, w, stride=1, dilation=1, pad=0):
    """x (N,C,H,W) * w (OC,C,KH,KW) -> (N,OC,OH,OW), zero padding."""
    return _BACKENDS[_active_name].conv2d_fwd(x, w, stride, dilation, pad)


def conv2d_fwd_ex(x, w, stride=1, dilation=1, pad=0):
    """Forward plus an opaque backend context reusable by conv2d_bwd_w_ex."""
    return _BACKENDS[_active_name].conv2d_fwd_ex(x, w, stride, dilation, pad)


def conv2d_bwd_x(gy, w, h, wd, stride=1, dilation=1, pad=0):
    """Gradient of conv2d_fwd w.r.t. its input, given upstream gy."""
    return _BACKENDS[_active_name].conv2d_bwd_x(gy, w, h, wd, stride, dilation, pad)


def conv2d_bwd_w(gy, x, kh, kw, stride=1, dilation=1, pad=0):
    """Gradient of conv2d_fwd w.r.t. the weight tensor."""
    return _BACKENDS[_active_name].conv2d_bwd_w(gy, x, kh, kw, stride, dilation, pad)


def conv2d_bwd_w_ex(gy, ctx, x, kh, kw, stride=1, dilation=1, pad=0):
    """Weight gradient; reuses the forward context when the backend kept one."""
    return _BACKENDS[_active_name].conv2d_bwd_w_ex(gy, ctx, x, kh, kw,
                                                   stride, dilation, pad)
