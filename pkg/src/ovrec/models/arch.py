"""Architecture configurations.

Counts and widths are config-driven so the same forward code serves the
full-scale 256x256 networks and the micro-nets used in gradient tests.
"""

from dataclasses import dataclass, asdict


@dataclass(frozen=True)
class GeneratorArch:
    """Encoder / dilated-residual-body / decoder generator with a sigmoid head.

    Defaults: stride-2 encoder halving the resolution twice (256 -> 64)
    and 8 residual blocks with dilation 2.
    """
    in_channels: int
    out_channels: int
    base_width: int = 64
    n_down: int = 2
    n_res: int = 8
    res_dilation: int = 2
    stem_kernel: int = 7

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.n_down < 1 or self.n_res < 0 or self.base_width < 1:
            raise ValueError("invalid generator architecture")
        if self.stem_kernel % 2 != 1:
            raise ValueError("stem_kernel must be odd")

    @property
    def downsample_factor(self) -> int:
        return 2 ** self.n_down

    def widths(self):
        return [self.base_width * (2 ** i) for i in range(self.n_down + 1)]


@dataclass(frozen=True)
class PatchDiscArch:
    """Fully convolutional stack of stride-2 convs emitting an h*w logit map."""
    in_channels: int
    base_width: int = 64
    n_down: int = 3
    max_width: int = 512

    def __post_init__(self):
        if self.in_channels < 1 or self.n_down < 1 or self.base_width < 1:
            raise ValueError("invalid discriminator architecture")

    @property
    def min_input(self) -> int:
        return 2 ** self.n_down

    def widths(self):
        return [min(self.base_width * (2 ** i), self.max_width)
                for i in range(self.n_down)]

    def map_size(self, h: int, w: int):
        return h // self.min_input, w // self.min_input


@dataclass(frozen=True)
class MaskDiscArch:
    """Patch backbone plus a fully connected head to one scalar logit."""
    patch: PatchDiscArch
    input_size: int

    def __post_init__(self):
        if self.input_size % self.patch.min_input != 0:
            raise ValueError("input_size must be divisible by the stride schedule")


def arch_to_dict(arch):
    if isinstance(arch, GeneratorArch):
        return {"kind": "generator", **asdict(arch)}
    if isinstance(arch, MaskDiscArch):
        return {"kind": "mask_disc", "patch": asdict(arch.patch),
                "input_size": arch.input_size}
    if isinstance(arch, PatchDiscArch):
        return {"kind": "patch_disc", **asdict(arch)}
    raise TypeError(f"unknown arch type {type(arch)!r}")


def arch_from_dict(d):
    kind = d["kind"]
    body = {k: v for k, v in d.items() if k != "kind"}
    if kind == "generator":
        return GeneratorArch(**body)
    if kind == "patch_disc":
        return PatchDiscArch(**body)
    if kind == "mask_disc":
        return MaskDiscArch(patch=PatchDiscArch(**body["patch"]),
                            input_size=body["input_size"])
    raise ValueError(f"unknown arch kind {kind!r}")
