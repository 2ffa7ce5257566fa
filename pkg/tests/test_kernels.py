"""Both conv backends against an independent per-element oracle."""

import numpy as np
import pytest

from ovrec import kernels
from ovrec.kernels import numpy_backend

try:
    from ovrec.kernels import numba_backend
    BACKENDS = [numpy_backend, numba_backend]
except ImportError:
    BACKENDS = [numpy_backend]


def naive_conv(x, w, s, d, p):
    n, c, h, wd = x.shape
    oc, _, kh, kw = w.shape
    oh = (h + 2 * p - d * (kh - 1) - 1) // s + 1
    ow = (wd + 2 * p - d * (kw - 1) - 1) // s + 1
    y = np.zeros((n, oc, oh, ow))
    for i in range(n):
        for o in range(oc):
            for oy in range(oh):
                for ox in range(ow):
                    acc = 0.0
                    for ci in range(c):
                        for ky in range(kh):
                            for kx in range(kw):
                                iy = oy * s - p + ky * d
                                ix = ox * s - p + kx * d
                                if 0 <= iy < h and 0 <= ix < wd:
                                    acc += x[i, ci, iy, ix] * w[o, ci, ky, kx]
                    y[i, o, oy, ox] = acc
    return y


CASES = [(1, 1, 1, 3, 8), (2, 1, 1, 4, 8), (1, 2, 2, 3, 9), (1, 1, 3, 7, 12),
         (2, 1, 1, 3, 10), (3, 1, 1, 3, 11), (2, 2, 2, 3, 12), (1, 1, 0, 1, 6)]


@pytest.mark.parametrize("backend", BACKENDS, ids=lambda b: b.__name__.rsplit(".", 1)[-1])
@pytest.mark.parametrize("s,d,p,k,h", CASES)
def test_forward_matches_oracle(backend, s, d, p, k, h):
    rng = np.random.default_rng(h * 100 + k)
    x = rng.normal(size=(2, 3, h, h))
    w = rng.normal(size=(4, 3, k, k))
    ref = naive_conv(x, w, s, d, p)
    got = backend.conv2d_fwd(x, w, s, d, p)
    assert got.shape == ref.shape
    np.testing.assert_allclose(got, ref, atol=1e-10)


@pytest.mark.parametrize("backend", BACKENDS, ids=lambda b: b.__name__.rsplit(".", 1)[-1])
@pytest.mark.parametrize("s,d,p,k,h", CASES)
def test_backward_matches_finite_differences(backend, s, d, p, k, h):
    rng = np.random.default_rng(h * 7 + k)
    x = rng.normal(size=(2, 3, h, h))
    w = rng.normal(size=(4, 3, k, k))
    ref = naive_conv(x, w, s, d, p)
    gy = rng.normal(size=ref.shape)
    gx = backend.conv2d_bwd_x(gy, w, h, h, s, d, p)
    gw = backend.conv2d_bwd_w(gy, x, k, k, s, d, p)
    eps = 1e-6
    for _ in range(4):
        i = tuple(rng.integers(0, dim) for dim in x.shape)
        xp, xm = x.copy(), x.copy()
        xp[i] += eps
        xm[i] -= eps
        fd = ((naive_conv(xp, w, s, d, p) - naive_conv(xm, w, s, d, p)) * gy).sum() / (2 * eps)
        assert abs(fd - gx[i]) < 1e-4
    for _ in range(4):
        i = tuple(rng.integers(0, dim) for dim in w.shape)
        wp, wm = w.copy(), w.copy()
        wp[i] += eps
        wm[i] -= eps
        fd = ((naive_conv(x, wp, s, d, p) - naive_conv(x, wm, s, d, p)) * gy).sum() / (2 * eps)
        assert abs(fd - gw[i]) < 1e-4


@pytest.mark.skipif(len(BACKENDS) < 2, reason="numba unavailable")
def test_backends_agree():
    rng = np.random.default_rng(5)
    for s, d, p, k, h in CASES:
        x = rng.normal(size=(2, 3, h, h)).astype(np.float32)
        w = rng.normal(size=(4, 3, k, k)).astype(np.float32)
        a = numpy_backend.conv2d_fwd(x, w, s, d, p)
        b = numba_backend.conv2d_fwd(x, w, s, d, p)
        np.testing.assert_allclose(a, b, rtol=2e-5, atol=2e-5)


def test_dispatch_and_selection():
    assert kernels.get_backend() in kernels.available_backends()
    with pytest.raises(ValueError):
        kernels.set_backend("no-such-backend")
    prev = kernels.get_backend()
    for name in kernels.available_backends():
        kernels.set_backend(name)
        x = np.ones((1, 1, 4, 4), dtype=np.float32)
        w = np.ones((1, 1, 3, 3), dtype=np.float32)
        y = kernels.conv2d_fwd(x, w, 1, 1, 1)
        assert y.shape == (1, 1, 4, 4)
        assert y[0, 0, 1, 1] == 9.0
    kernels.set_backend(prev)


def test_fwd_ex_context_reused_for_weight_grad():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 3, 8, 8))
    w = rng.normal(size=(4, 3, 3, 3))
    y, ctx = kernels.conv2d_fwd_ex(x, w, 1, 1, 1)
    gy = rng.normal(size=y.shape)
    gw_ctx = kernels.conv2d_bwd_w_ex(gy, ctx, x, 3, 3, 1, 1, 1)
    gw_direct = kernels.conv2d_bwd_w(gy, x, 3, 3, 1, 1, 1)
    np.testing.assert_allclose(gw_ctx, gw_direct, atol=1e-12)
