"""Autodiff engine: every op's gradient against central finite differences."""

import numpy as np
import pytest

from ovrec.engine import Adam, Tensor, no_grad, ops

RNG = np.random.default_rng(42)


def fd_check(build_loss, tensors, eps=1e-6, tol=1e-5, probes=6):
    loss = build_loss()
    loss.backward()
    grads = {k: t.grad.copy() for k, t in tensors.items()}
    for k, t in tensors.items():
        flat = t.data.reshape(-1)
        idxs = RNG.choice(flat.size, size=min(probes, flat.size), replace=False)
        for idx in idxs:
            old = flat[idx]
            flat[idx] = old + eps
            lp = build_loss().item()
            flat[idx] = old - eps
            lm = build_loss().item()
            flat[idx] = old
            fd = (lp - lm) / (2 * eps)
            an = grads[k].reshape(-1)[idx]
            assert abs(fd - an) <= tol * max(1.0, abs(fd), abs(an)), \
                f"{k}[{idx}]: fd={fd} analytic={an}"


def _p(shape, scale=1.0):
    return Tensor(RNG.normal(0, scale, shape), requires_grad=True)


def test_conv_norm_act_sigmoid_chain():
    x = _p((2, 3, 8, 8))
    w = _p((4, 3, 3, 3), 0.3)
    b = _p((4,), 0.1)
    g = Tensor(RNG.normal(1, 0.2, (4,)), requires_grad=True)
    be = _p((4,), 0.1)

    def f():
        for t in (x, w, b, g, be):
            t.grad = None
        y = ops.conv2d(x, w, b, stride=2, pad=1)
        y = ops.instance_norm(y, g, be)
        y = ops.leaky_relu(y, 0.2)
        return ops.mean_all(ops.sigmoid(y))

    fd_check(f, dict(x=x, w=w, b=b, gamma=g, beta=be))


def test_dilated_conv_gradients():
    x = _p((1, 2, 9, 9))
    w = _p((3, 2, 3, 3), 0.3)
    b = _p((3,))

    def f():
        for t in (x, w, b):
            t.grad = None
        return ops.mean_all(ops.abs_(ops.conv2d(x, w, b, dilation=2, pad=2)))

    fd_check(f, dict(x=x, w=w, b=b))


def test_dense_softmax_nll():
    x = _p((5, 6))
    w = _p((6, 4), 0.3)
    b = _p((4,))
    labels = RNG.integers(0, 4, size=5)

    def f():
        for t in (x, w, b):
            t.grad = None
        return ops.nll_loss(ops.log_softmax(ops.dense(x, w, b)), labels)

    fd_check(f, dict(x=x, w=w, b=b))


def test_structural_ops():
    xa = _p((2, 2, 4, 4))
    xb = _p((2, 2, 4, 4))
    mask = (RNG.random((2, 2, 8, 8)) > 0.5).astype(float)

    def f():
        for t in (xa, xb):
            t.grad = None
        u = ops.upsample2x(ops.mul(xa, xb))
        c = ops.concat_channels([u, ops.upsample2x(ops.softplus(xa))])
        s = ops.abs_(c)
        t1 = ops.masked_mean(ops.sub(u, Tensor(np.ones_like(u.data))), mask)
        t2 = ops.mean_all(ops.mean_spatial(s))
        t3 = ops.mean_all(ops.slice_rows(ops.flatten2(c), 0, 1))
        return ops.add(ops.add(t1, t2), t3)

    fd_check(f, dict(xa=xa, xb=xb))


def test_mul_same_tensor_doubles_gradient():
    x = _p((3,))
    y = ops.sum_all(ops.mul(x, x))
    y.backward()
    np.testing.assert_allclose(x.grad, 2 * x.data, atol=1e-12)


def test_masked_mean_empty_region_rejected():
    x = _p((2, 2))
    with pytest.raises(ValueError):
        ops.masked_mean(x, np.zeros((2, 2)))


def test_backward_requires_scalar():
    x = _p((2, 2))
    with pytest.raises(ValueError):
        ops.scale(x, 2.0).backward()


def test_detach_blocks_gradient():
    x = _p((3,))
    y = ops.sum_all(ops.mul(x.detach(), Tensor(np.ones(3), requires_grad=False)))
    assert not y.requires_grad


def test_no_grad_builds_no_graph():
    x = _p((2, 2))
    with no_grad():
        y = ops.scale(x, 3.0)
    assert not y.requires_grad and y.backward_fn is None


def test_softplus_stable_at_extremes():
    x = Tensor(np.array([-800.0, 0.0, 800.0]))
    y = ops.softplus(x)
    assert np.isfinite(y.data).all()
    np.testing.assert_allclose(y.data[1], np.log(2.0), atol=1e-12)
    np.testing.assert_allclose(y.data[2], 800.0, atol=1e-9)
    assert y.data[0] == 0.0


def test_adam_moves_params_and_zero_grad_is_identity():
    p = Tensor(np.ones(4), requires_grad=True)
    opt = Adam({"p": p}, lr=0.1)
    p.grad = np.full(4, 0.5)
    before = p.data.copy()
    opt.step()
    assert not np.array_equal(p.data, before)
    frozen = p.data.copy()
    opt2 = Adam({"p": p}, lr=0.1)
    p.grad = None
    opt2.step()
    np.testing.assert_array_equal(p.data, frozen)


def test_adam_deterministic():
    def train():
        rng = np.random.default_rng(0)
        p = Tensor(rng.normal(size=8), requires_grad=True)
        opt = Adam({"p": p}, lr=1e-2)
        for i in range(10):
            loss = ops.mean_all(ops.mul(p, p))
            opt.zero_grad()
            loss.backward()
            opt.step()
        return p.data.copy()

    np.testing.assert_array_equal(train(), train())
