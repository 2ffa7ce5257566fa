"""Deterministic synthetic occluded-vehicle sample generation and dataset IO.

Each sample is a pure function of (config, seed): a procedural vehicle is
drawn over a procedural background, occluders (ellipses, blob polygons,
vehicle silhouettes) are composited over it until the occluded area
fraction lands in the configured range, and exact masks fall out of the
construction. Photometric jitter stands in for harmonization and is
confined to occluder footprints.
"""

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import imgio, silhouette_pool, vehicles
from .util import fold_seed, mask_bbox, quantize8, rng_for, validate_image, validate_mask

log = logging.getLogger(__name__)

MAX_PLACEMENT_RETRIES = 64

SHAPE_FAMILIES = ("procedural_car", "imported")


class SynthDataError(Exception):
    pass


class InfeasibleSynthConfigError(SynthDataError):
    """No occluder placement reached the target occlusion range."""


class DatasetError(Exception):
    pass


class ManifestError(DatasetError):
    pass


class MissingDatasetFileError(DatasetError):
    def __init__(self, sample_id, path):
        super().__init__(f"sample {sample_id!r}: missing file {path}")
        self.sample_id = sample_id


class ChecksumMismatchError(DatasetError):
    def __init__(self, sample_id, path):
        super().__init__(f"sample {sample_id!r}: checksum mismatch for {path}")
        self.sample_id = sample_id


@dataclass(frozen=True)
class SynthConfig:
    image_size: int = 64
    occluder_count_range: tuple = (1, 3)
    occlusion_fraction_range: tuple = (0.2, 0.5)
    color_jitter_strength: float = 0.15
    vehicle_shape_family: str = "procedural_car"
    import_pool_dir: str = ""        # vehicle masks for the "imported" family

    def __post_init__(self):
        if self.image_size not in (64, 128, 256):
            raise ValueError(f"image_size must be one of 64/128/256, got {self.image_size}")
        lo, hi = self.occluder_count_range
        if not (0 <= lo <= hi):
            raise ValueError("occluder_count_range must be ordered and nonnegative")
        flo, fhi = self.occlusion_fraction_range
        if not (0.05 <= flo <= fhi <= 0.8):
            raise ValueError("occlusion_fraction_range must lie within [0.05, 0.8]")
        if self.color_jitter_strength < 0:
            raise ValueError("color_jitter_strength must be >= 0")
        if self.vehicle_shape_family not in SHAPE_FAMILIES:
            raise ValueError(f"unknown vehicle_shape_family {self.vehicle_shape_family!r}")

    def fingerprint(self) -> str:
        d = dataclasses.asdict(self)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


@dataclass
class TrainingSample:
    image_occluded: np.ndarray     # (H,W,3) float32 in [0,1]
    visible_mask: np.ndarray       # (H,W,1) float32, binary
    full_mask: np.ndarray          # (H,W,1) float32, binary
    target_unoccluded: np.ndarray  # (H,W,3)
    background_plate: np.ndarray   # (H,W,3)
    occlusion_fraction: float
    sample_id: str
    seed: int | None


def validate_sample(s: TrainingSample) -> None:
    validate_image(s.image_occluded, "image_occluded")
    validate_image(s.target_unoccluded, "target_unoccluded")
    validate_image(s.background_plate, "background_plate")
    validate_mask(s.visible_mask, name="visible_mask")
    validate_mask(s.full_mask, name="full_mask")
    if (s.visible_mask > s.full_mask).any():
        raise ValueError("visible_mask must be contained in full_mask")
    full = s.full_mask.sum()
    if full > 0:
        f = 1.0 - s.visible_mask.sum() / full
        if abs(f - s.occlusion_fraction) > 1e-6:
            raise ValueError("occlusion_fraction inconsistent with masks")


def composite_occluder(base, occluder_rgb, occluder_alpha, position):
    """Alpha-blend an occluder patch onto `base` at (row, col) top-left.

    Returns (composited image, clipped footprint mask where alpha > 0).
    The patch may extend past the frame; it is clipped. A patch entirely
    outside the frame is an error.
    """
    h, w = base.shape[:2]
    oh, ow = occluder_rgb.shape[:2]
    r0, c0 = position
    rb0, rb1 = max(r0, 0), min(r0 + oh, h)
    cb0, cb1 = max(c0, 0), min(c0 + ow, w)
    if rb0 >= rb1 or cb0 >= cb1:
        raise SynthDataError("occluder entirely outside the frame")
    win_rgb = occluder_rgb[rb0 - r0:rb1 - r0, cb0 - c0:cb1 - c0]
    win_a = occluder_alpha[rb0 - r0:rb1 - r0, cb0 - c0:cb1 - c0]
    out = base.copy()
    region = out[rb0:rb1, cb0:cb1]
    out[rb0:rb1, cb0:cb1] = win_a * win_rgb + (1.0 - win_a) * region
    footprint = np.zeros((h, w, 1), dtype=np.float32)
    footprint[rb0:rb1, cb0:cb1] = (win_a > 0).astype(np.float32)
    return out.astype(np.float32), footprint


def visible_mask_of(full_mask, occluder_union):
    """Visible part of the instance: full mask minus occluded pixels."""
    if full_mask.shape != occluder_union.shape:
        raise ValueError("mask dimension mismatch")
    return (full_mask * (1.0 - occluder_union)).astype(np.float32)


_occluder_pools = {}


def _occluder_silhouettes(cfg: SynthConfig) -> silhouette_pool.SilhouettePool:
    key = cfg.fingerprint()
    if key not in _occluder_pools:
        _occluder_pools[key] = silhouette_pool.build_procedural_pool(
            32, fold_seed("occluder-pool", key))
    return _occluder_pools[key]


_vehicle_pools = {}


def _imported_vehicles(cfg: SynthConfig) -> silhouette_pool.SilhouettePool:
    if not cfg.import_pool_dir:
        raise SynthDataError("vehicle_shape_family='imported' requires import_pool_dir")
    key = cfg.import_pool_dir
    if key not in _vehicle_pools:
        _vehicle_pools[key] = silhouette_pool.load_pool(cfg.import_pool_dir)
    return _vehicle_pools[key]


def _draw_vehicle(cfg, rng, size):
    if cfg.vehicle_shape_family == "procedural_car":
        return vehicles.draw_vehicle(size, size, rng)
    pool = _imported_vehicles(cfg)
    sil = pool.silhouettes[int(rng.integers(pool.count))]
    ref = np.zeros((size, size, 1), dtype=np.float32)
    sh = int(rng.uniform(0.4, 0.8) * size)
    sw = int(sh * sil.shape[1] / sil.shape[0])
    sw = min(max(sw, 1), size - 2)
    r0 = int(rng.uniform(0, size - sh))
    c0 = int(rng.uniform(0, size - sw))
    ref[r0:r0 + sh, c0:c0 + sw] = silhouette_pool.resize_mask_nearest(sil, sh, sw)
    rgb = np.zeros((size, size, 3), dtype=np.float32)
    color = rng.uniform(0.15, 0.95, size=3)
    rgb[ref[:, :, 0] > 0] = color
    rgb += rng.normal(0, 0.02, rgb.shape) * ref
    return np.clip(rgb, 0, 1).astype(np.float32), ref, -1


def vehicle_archetype_for(cfg: SynthConfig, seed: int) -> int:
    """Shape class the sample at `seed` was drawn with (derivable, not stored)."""
    rng = rng_for("vehicle", cfg.fingerprint(), seed)
    return int(rng.integers(vehicles.N_ARCHETYPES))


def _make_occluder(cfg, rng, veh_bbox, size):
    r0, r1, c0, c1 = veh_bbox
    bh, bw = r1 - r0, c1 - c0
    kind = ["ellipse", "polygon", "silhouette"][int(rng.integers(3))]
    oh = max(4, int(rng.uniform(0.35, 1.1) * bh))
    ow = max(4, int(rng.uniform(0.35, 1.1) * bw))
    if kind == "ellipse":
        alpha = vehicles.fill_ellipse(oh, ow, oh / 2, ow / 2,
                                      oh * rng.uniform(0.3, 0.5),
                                      ow * rng.uniform(0.3, 0.5),
                                      angle=rng.uniform(0, np.pi))
    elif kind == "polygon":
        k = int(rng.integers(5, 9))
        ang = np.sort(rng.uniform(0, 2 * np.pi, size=k))
        rad = rng.uniform(0.25, 0.5, size=k)
        pts = [(oh / 2 + np.sin(a) * r * oh, ow / 2 + np.cos(a) * r * ow)
               for a, r in zip(ang, rad)]
        alpha = vehicles.fill_polygon(oh, ow, pts)
    else:
        pool = _occluder_silhouettes(cfg)
        sil = pool.silhouettes[int(rng.integers(pool.count))]
        alpha = silhouette_pool.resize_mask_nearest(sil, oh, ow)[:, :, 0] > 0
    alpha = alpha.astype(np.float32)[:, :, None]

    color = rng.uniform(0.1, 0.9, size=3)
    rgb = np.broadcast_to(color, (oh, ow, 3)).astype(np.float64)
    rgb = rgb + rng.normal(0, 0.03, rgb.shape)
    s = cfg.color_jitter_strength
    contrast = 1.0 + rng.uniform(-s, s)
    brightness = rng.uniform(-0.5 * s, 0.5 * s)
    rgb = np.clip((rgb - 0.5) * contrast + 0.5 + brightness, 0, 1).astype(np.float32)

    # center near the vehicle so overlap is likely
    cy = rng.uniform(r0 - 0.15 * bh, r1 + 0.15 * bh)
    cx = rng.uniform(c0 - 0.15 * bw, c1 + 0.15 * bw)
    pos = (int(round(cy - oh / 2)), int(round(cx - ow / 2)))
    return rgb, alpha, pos


def generate_sample(cfg: SynthConfig, seed: int) -> TrainingSample:
    """Deterministically build one occluded-vehicle training sample."""
    size = cfg.image_size
    fp = cfg.fingerprint()
    bg = vehicles.draw_background(size, size, rng_for("background", fp, seed))
    vrng = rng_for("vehicle", fp, seed)
    veh_rgb, full_mask, _ = _draw_vehicle(cfg, vrng, size)
    target = np.where(full_mask > 0, veh_rgb, bg).astype(np.float32)

    bg = quantize8(bg)
    target = quantize8(target)
    bbox = mask_bbox(full_mask)
    if bbox is None:
        raise SynthDataError("vehicle rasterized to an empty mask")
    lo, hi = cfg.occlusion_fraction_range
    full_area = full_mask.sum()

    for attempt in range(MAX_PLACEMENT_RETRIES):
        arng = rng_for("occluders", fp, seed, attempt)
        cmin, cmax = cfg.occluder_count_range
        count = int(arng.integers(cmin, cmax + 1))
        occluded = target
        union = np.zeros((size, size, 1), dtype=np.float32)
        ok = True
        for _ in range(count):
            rgb, alpha, pos = _make_occluder(cfg, arng, bbox, size)
            try:
                occluded, footprint = composite_occluder(occluded, rgb, alpha, pos)
            except SynthDataError:
                ok = False
                break
            union = np.maximum(union, footprint)
        if not ok:
            continue
        visible = visible_mask_of(full_mask, union)
        vis_area = visible.sum()
        frac = 1.0 - vis_area / full_area
        if lo <= frac <= hi and vis_area > 0:
            occluded = quantize8(occluded)
            return TrainingSample(
                image_occluded=occluded, visible_mask=visible,
                full_mask=full_mask, target_unoccluded=target,
                background_plate=bg, occlusion_fraction=float(frac),
                sample_id=f"s{seed:08d}", seed=int(seed))
    raise InfeasibleSynthConfigError(
        f"no occluder placement reached occlusion range [{lo}, {hi}] "
        f"after {MAX_PLACEMENT_RETRIES} attempts (seed {seed})")


_FILE_KEYS = {"occ": ("images", "image_occluded", imgio.save_image_png, imgio.load_image_png),
              "tgt": ("images", "target_unoccluded", imgio.save_image_png, imgio.load_image_png),
              "bg": ("images", "background_plate", imgio.save_image_png, imgio.load_image_png),
              "vis": ("masks", "visible_mask", imgio.save_mask_png, imgio.load_mask_png),
              "full": ("masks", "full_mask", imgio.save_mask_png, imgio.load_mask_png)}


def write_dataset(samples, out_dir, overwrite=False) -> Path:
    """Persist samples under `out_dir`; returns the manifest path."""
    out = Path(out_dir)
    manifest = out / "manifest.jsonl"
    if manifest.exists() and not overwrite:
        raise DatasetError(f"{manifest} already exists")
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    records = []
    for s in samples:
        files, sums = {}, {}
        for key, (sub, attr, save, _load) in _FILE_KEYS.items():
            rel = f"{sub}/{s.sample_id}_{key}.png"
            save(out / rel, getattr(s, attr))
            files[key] = rel
            sums[key] = imgio.sha256_file(out / rel)
        records.append({"sample_id": s.sample_id, "seed": s.seed,
                        "occlusion_fraction": s.occlusion_fraction,
                        "files": files, "checksums": sums})
    with open(manifest, "w") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    return manifest


def read_dataset(manifest_path):
    """Load a dataset; verifies checksums and fails naming the sample."""
    manifest = Path(manifest_path)
    if manifest.is_dir():
        manifest = manifest / "manifest.jsonl"
    if not manifest.exists():
        raise ManifestError(f"manifest not found: {manifest}")
    root = manifest.parent
    samples = []
    with open(manifest) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                sid = rec["sample_id"]
                files = rec["files"]
                sums = rec["checksums"]
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise ManifestError(f"{manifest}:{lineno}: corrupt record ({e})") from e
            loaded = {}
            for key, (sub, attr, _save, load) in _FILE_KEYS.items():
                path = root / files[key]
                if not path.exists():
                    raise MissingDatasetFileError(sid, path)
                if imgio.sha256_file(path) != sums[key]:
                    raise ChecksumMismatchError(sid, path)
                loaded[attr] = load(path)
            samples.append(TrainingSample(
                occlusion_fraction=float(rec["occlusion_fraction"]),
                sample_id=sid,
                seed=None if rec["seed"] is None else int(rec["seed"]),
                **loaded))
    return samples


def generate_dataset(cfg: SynthConfig, count: int, base_seed: int):
    """Generate `count` samples from consecutive seeds starting at base_seed.

    Seeds whose occluder placement is infeasible are skipped (with a
    warning), so the result is still a pure function of (cfg, count,
    base_seed).
    """
    samples = []
    seed = base_seed
    attempts = 0
    while len(samples) < count:
        if attempts > 4 * count + MAX_PLACEMENT_RETRIES:
            raise InfeasibleSynthConfigError(
                f"could not generate {count} samples from seed {base_seed}")
        try:
            samples.append(generate_sample(cfg, seed))
        except InfeasibleSynthConfigError:
            log.warning("seed %d infeasible for occlusion range, skipping", seed)
        seed += 1
        attempts += 1
    return samples
