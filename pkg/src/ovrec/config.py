"""Declarative run configuration: YAML in, validated dataclasses out.

Unknown keys are rejected with their full path; a config serializes back
to a canonical form that parses to an equal Config. An empty file yields
all defaults (reconstruction weights 10, perceptual weights 1, batch size
4, LR phases 1e-4 / 1e-5 / joint 1e-6, two inference iterations).
"""

import dataclasses
import hashlib
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .app_trainer import AppLossWeights
from .models import GeneratorArch, MaskDiscArch, PatchDiscArch
from .seg_trainer import SegLossWeights
from .synth_data import SynthConfig


class ConfigError(Exception):
    pass


@dataclass
class GenArchSection:
    base_width: int = 64
    n_down: int = 2
    n_res: int = 8
    res_dilation: int = 2
    stem_kernel: int = 7


@dataclass
class DiscArchSection:
    base_width: int = 64
    n_down: int = 3
    max_width: int = 512


@dataclass
class ArchSection:
    image_size: int = 256
    generator: GenArchSection = field(default_factory=GenArchSection)
    mask_disc: DiscArchSection = field(default_factory=DiscArchSection)
    image_disc: DiscArchSection = field(default_factory=DiscArchSection)
    segmenter: GenArchSection = field(default_factory=lambda: GenArchSection(
        base_width=8, n_res=2))


@dataclass
class PoolSection:
    size: int = 2048
    source: str = "procedural"   # procedural | import
    import_dir: str = ""


@dataclass
class ScheduleSection:
    batch_size: int = 4
    lr_phase1: float = 1e-4
    lr_phase2: float = 1e-5
    lr_joint: float = 1e-6
    seg_steps: int = 2000
    app_steps: int = 2000
    joint_steps: int = 200
    eval_every: int = 200
    plateau_window: int = 10
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    stop_at_iou: float | None = None
    stop_at_invisible_l1: float | None = None
    nonfinite_budget: int = 10
    segmenter_steps: int = 600
    segmenter_lr: float = 1e-3


@dataclass
class TrainSection:
    mask_source: str = "predicted"    # predicted | ground_truth
    disc_mode: str = "coupled"        # coupled | single | none
    two_path: bool = True
    saturating_adv: bool = False
    swap_path2_slots: bool = False
    backflow: bool = True
    train_segmenter: bool = True      # fit the toy visible segmenter at stage 1


@dataclass
class EvalSection:
    iterations: int = 2
    icp: bool = False
    ss: bool = False


@dataclass
class DataSection:
    train_dir: str = ""
    val_dir: str = ""
    test_dir: str = ""


@dataclass
class Config:
    seed: int = 0
    synth_count: int = 64
    synth: SynthConfig = field(default_factory=SynthConfig)
    data: DataSection = field(default_factory=DataSection)
    pool: PoolSection = field(default_factory=PoolSection)
    arch: ArchSection = field(default_factory=ArchSection)
    seg_weights: SegLossWeights = field(default_factory=SegLossWeights)
    app_weights: AppLossWeights = field(default_factory=AppLossWeights)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def to_dict(self) -> dict:
        def conv(v):
            if dataclasses.is_dataclass(v):
                return {f.name: conv(getattr(v, f.name))
                        for f in dataclasses.fields(v)}
            if isinstance(v, tuple):
                return [conv(x) for x in v]
            return v
        return conv(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_yaml().encode()).hexdigest()

    def archs(self) -> dict:
        g = self.arch.generator
        gen_kw = dict(base_width=g.base_width, n_down=g.n_down, n_res=g.n_res,
                      res_dilation=g.res_dilation, stem_kernel=g.stem_kernel)
        md = self.arch.mask_disc
        im = self.arch.image_disc
        sg = self.arch.segmenter
        size = self.arch.image_size
        return {
            "g1": GeneratorArch(in_channels=4, out_channels=1, **gen_kw),
            "g2": GeneratorArch(in_channels=5, out_channels=3, **gen_kw),
            "d_obj": MaskDiscArch(PatchDiscArch(1, md.base_width, md.n_down,
                                                md.max_width), size),
            "d_ins": MaskDiscArch(PatchDiscArch(5, md.base_width, md.n_down,
                                                md.max_width), size),
            "d2": PatchDiscArch(3, im.base_width, im.n_down, im.max_width),
            "seg_f": GeneratorArch(in_channels=3, out_channels=1,
                                   base_width=sg.base_width, n_down=sg.n_down,
                                   n_res=sg.n_res, res_dilation=sg.res_dilation,
                                   stem_kernel=sg.stem_kernel),
        }


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for key, value in data.items():
        if key not in fields:
            raise ConfigError(f"unknown key '{path + '.' if path else ''}{key}'")
        sub = f"{path}.{key}" if path else key
        hint = hints[key]
        if dataclasses.is_dataclass(hint):
            kwargs[key] = _build(hint, value or {}, sub)
        elif hint is tuple or typing.get_origin(hint) is tuple:
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{sub}: expected a list")
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path or 'config'}: {e}") from e


def config_from_dict(data: dict) -> Config:
    return _build(Config, data or {}, "")


def load_config(path) -> Config:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = yaml.safe_load(p.read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"{p}: invalid YAML ({e})") from e
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{p}: top level must be a mapping")
    return config_from_dict(data)


def save_config(config: Config, path) -> None:
    Path(path).write_text(config.to_yaml())
