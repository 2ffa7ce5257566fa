"""Network parameter sets and pure forward functions.

Parameters are plain dicts of named tensors; forwards are deterministic
functions of (params, input) with no hidden state.
"""

from collections import Counter
from dataclasses import dataclass

import numpy as np

from ..engine import Tensor, ops
from ..util import fold_seed
from .arch import GeneratorArch, MaskDiscArch, PatchDiscArch

# Per-network forward-call counters, keyed by the params' name. Used by
# tests asserting e.g. that inference never runs a ground-truth path.
FORWARD_COUNTS = Counter()


def reset_forward_counts():
    FORWARD_COUNTS.clear()


@dataclass
class GeneratorParams:
    arch: GeneratorArch
    tensors: dict
    name: str = "g"


@dataclass
class PatchDiscParams:
    arch: PatchDiscArch
    tensors: dict
    name: str = "d"


@dataclass
class MaskDiscParams:
    arch: MaskDiscArch
    tensors: dict
    name: str = "d"


def _conv_w(rng, out_c, in_c, k, dtype):
    fan_in = in_c * k * k
    std = np.sqrt(2.0 / fan_in)
    return Tensor(rng.normal(0.0, std, (out_c, in_c, k, k)).astype(dtype),
                  requires_grad=True)


def _zeros(shape, dtype):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def _ones(shape, dtype):
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


def _add_norm(t, prefix, width, dtype):
    t[f"{prefix}.gamma"] = _ones((width,), dtype)
    t[f"{prefix}.beta"] = _zeros((width,), dtype)


def _init_generator(arch: GeneratorArch, seed, name, dtype):
    rng = np.random.default_rng(fold_seed("init", name, seed))
    w = arch.widths()
    t = {}
    t["stem.w"] = _conv_w(rng, w[0], arch.in_channels, arch.stem_kernel, dtype)
    t["stem.b"] = _zeros((w[0],), dtype)
    _add_norm(t, "stem.n", w[0], dtype)
    for i in range(arch.n_down):
        t[f"down{i}.w"] = _conv_w(rng, w[i + 1], w[i], 3, dtype)
        t[f"down{i}.b"] = _zeros((w[i + 1],), dtype)
        _add_norm(t, f"down{i}.n", w[i + 1], dtype)
    for i in range(arch.n_res):
        for j in (1, 2):
            t[f"res{i}.c{j}.w"] = _conv_w(rng, w[-1], w[-1], 3, dtype)
            t[f"res{i}.c{j}.b"] = _zeros((w[-1],), dtype)
            _add_norm(t, f"res{i}.n{j}", w[-1], dtype)
    for i in range(arch.n_down):
        cin, cout = w[arch.n_down - i], w[arch.n_down - i - 1]
        t[f"up{i}.w"] = _conv_w(rng, cout, cin, 3, dtype)
        t[f"up{i}.b"] = _zeros((cout,), dtype)
        _add_norm(t, f"up{i}.n", cout, dtype)
    t["head.w"] = _conv_w(rng, arch.out_channels, w[0], arch.stem_kernel, dtype)
    t["head.b"] = _zeros((arch.out_channels,), dtype)
    return GeneratorParams(arch, t, name)


def _init_patch(arch: PatchDiscArch, seed, name, dtype):
    rng = np.random.default_rng(fold_seed("init", name, seed))
    t = {}
    prev = arch.in_channels
    for i, width in enumerate(arch.widths()):
        t[f"l{i}.w"] = _conv_w(rng, width, prev, 4, dtype)
        t[f"l{i}.b"] = _zeros((width,), dtype)
        if i > 0:
            _add_norm(t, f"l{i}.n", width, dtype)
        prev = width
    t["out.w"] = _conv_w(rng, 1, prev, 3, dtype)
    t["out.b"] = _zeros((1,), dtype)
    return PatchDiscParams(arch, t, name)


def _init_mask_disc(arch: MaskDiscArch, seed, name, dtype):
    backbone = _init_patch(arch.patch, seed, name, dtype)
    t = backbone.tensors
    rng = np.random.default_rng(fold_seed("init", name, seed, "fc"))
    h, w = arch.patch.map_size(arch.input_size, arch.input_size)
    fan_in = h * w
    t["fc.w"] = Tensor(rng.normal(0.0, np.sqrt(1.0 / fan_in), (fan_in, 1)).astype(dtype),
                       requires_grad=True)
    t["fc.b"] = _zeros((1,), dtype)
    return MaskDiscParams(arch, t, name)


def init_params(arch, seed, name="net", dtype=np.float32):
    """Deterministic fan-in-scaled init; biases (and norm shifts) start at zero."""
    if isinstance(arch, GeneratorArch):
        return _init_generator(arch, seed, name, dtype)
    if isinstance(arch, MaskDiscArch):
        return _init_mask_disc(arch, seed, name, dtype)
    if isinstance(arch, PatchDiscArch):
        return _init_patch(arch, seed, name, dtype)
    raise TypeError(f"unknown arch type {type(arch)!r}")


def _in(t, prefix, x):
    return ops.instance_norm(x, t[f"{prefix}.gamma"], t[f"{prefix}.beta"])


def generator_forward(params: GeneratorParams, x) -> Tensor:
    """Encoder -> dilated residual body -> decoder; output in [0,1].

    Input (N,Cin,H,W) with H,W divisible by the downsampling factor;
    output keeps the spatial size.
    """
    arch, t = params.arch, params.tensors
    if not isinstance(x, Tensor):
        x = Tensor(x)
    n, c, h, w = x.shape
    if c != arch.in_channels:
        raise ValueError(f"expected {arch.in_channels} input channels, got {c}")
    f = arch.downsample_factor
    if h % f or w % f:
        raise ValueError(f"input size {h}x{w} not divisible by {f}")
    FORWARD_COUNTS[params.name] += 1

    pad = arch.stem_kernel // 2
    y = ops.conv2d(x, t["stem.w"], t["stem.b"], pad=pad)
    y = ops.leaky_relu(_in(t, "stem.n", y), 0.0)
    for i in range(arch.n_down):
        y = ops.conv2d(y, t[f"down{i}.w"], t[f"down{i}.b"], stride=2, pad=1)
        y = ops.leaky_relu(_in(t, f"down{i}.n", y), 0.0)
    d = arch.res_dilation
    for i in range(arch.n_res):
        r = ops.conv2d(y, t[f"res{i}.c1.w"], t[f"res{i}.c1.b"], dilation=d, pad=d)
        r = ops.leaky_relu(_in(t, f"res{i}.n1", r), 0.0)
        r = ops.conv2d(r, t[f"res{i}.c2.w"], t[f"res{i}.c2.b"], dilation=d, pad=d)
        r = _in(t, f"res{i}.n2", r)
        y = ops.add(y, r)
    for i in range(arch.n_down):
        y = ops.upsample2x(y)
        y = ops.conv2d(y, t[f"up{i}.w"], t[f"up{i}.b"], pad=1)
        y = ops.leaky_relu(_in(t, f"up{i}.n", y), 0.0)
    y = ops.conv2d(y, t["head.w"], t["head.b"], pad=pad)
    return ops.sigmoid(y)


def _patch_backbone(arch: PatchDiscArch, t, x) -> Tensor:
    if not isinstance(x, Tensor):
        x = Tensor(x)
    n, c, h, w = x.shape
    if c != arch.in_channels:
        raise ValueError(f"expected {arch.in_channels} input channels, got {c}")
    if h < arch.min_input or w < arch.min_input:
        raise ValueError(f"input {h}x{w} below minimum {arch.min_input}")
    if h % arch.min_input or w % arch.min_input:
        raise ValueError(f"input size {h}x{w} not divisible by {arch.min_input}")
    y = x
    for i in range(arch.n_down):
        y = ops.conv2d(y, t[f"l{i}.w"], t[f"l{i}.b"], stride=2, pad=1)
        if i > 0:
            y = _in(t, f"l{i}.n", y)
        y = ops.leaky_relu(y, 0.2)
    return ops.conv2d(y, t["out.w"], t["out.b"], pad=1)


def patch_disc_forward(params: PatchDiscParams, x) -> Tensor:
    """Logit map (N,1,h,w); h,w follow from the stride schedule."""
    FORWARD_COUNTS[params.name] += 1
    return _patch_backbone(params.arch, params.tensors, x)


def mask_disc_forward(params: MaskDiscParams, x) -> Tensor:
    """One unbounded logit per instance, shape (N,1)."""
    arch = params.arch
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.shape[2] != arch.input_size or x.shape[3] != arch.input_size:
        raise ValueError(
            f"mask discriminator expects {arch.input_size}x{arch.input_size} input, "
            f"got {x.shape[2]}x{x.shape[3]}")
    FORWARD_COUNTS[params.name] += 1
    y = _patch_backbone(arch.patch, params.tensors, x)
    y = ops.flatten2(y)
    return ops.dense(y, params.tensors["fc.w"], params.tensors["fc.b"])


def params_fingerprint(params) -> str:
    """Order-stable digest of all parameter bytes (for isolation tests)."""
    import hashlib
    h = hashlib.sha256()
    for k in sorted(params.tensors):
        h.update(k.encode())
        h.update(np.ascontiguousarray(params.tensors[k].data).tobytes())
    return h.hexdigest()
