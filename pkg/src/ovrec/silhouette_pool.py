"""Pool of authentic vehicle silhouettes used as extra adversarial samples.

The pool holds tight-cropped binary masks, built procedurally at desk
scale or imported from rendered-model screenshots (foreground = pixels
darker than 0.5 on a light background). Sampling rescales a uniformly
chosen silhouette to a reference mask's bounding box with a small
scale/translation jitter.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import imgio
from .util import mask_bbox, rng_for

log = logging.getLogger(__name__)

DEFAULT_POOL_SIZE = 2048


class PoolError(Exception):
    pass


class EmptyPoolError(PoolError):
    pass


@dataclass
class SilhouettePool:
    silhouettes: list = field(default_factory=list)   # (h,w,1) float32 binary
    source_tags: list = field(default_factory=list)   # "procedural" | "imported"

    @property
    def count(self) -> int:
        return len(self.silhouettes)


def tight_crop(mask: np.ndarray) -> np.ndarray:
    bb = mask_bbox(mask)
    if bb is None:
        raise ValueError("cannot tight-crop an empty mask")
    r0, r1, c0, c1 = bb
    return np.ascontiguousarray(mask[r0:r1, c0:c1])


def resize_mask_nearest(mask: np.ndarray, th: int, tw: int) -> np.ndarray:
    h, w = mask.shape[:2]
    rows = np.minimum((np.arange(th) * h) // th, h - 1)
    cols = np.minimum((np.arange(tw) * w) // tw, w - 1)
    return np.ascontiguousarray(mask[rows][:, cols])


def build_procedural_pool(n: int, seed: int, canvas: int = 96) -> SilhouettePool:
    """n distinct tight-cropped procedural vehicle silhouettes."""
    from . import vehicles  # deferred: vehicles has no pool dependency
    if n < 1:
        raise ValueError("pool size must be >= 1")
    pool = SilhouettePool()
    seen = set()
    i = 0
    attempt = 0
    while len(pool.silhouettes) < n:
        sil = vehicles.vehicle_silhouette(canvas, canvas, rng_for("pool", seed, i, attempt))
        sil = tight_crop(sil)
        key = (sil.shape, sil.tobytes())
        if key in seen:
            attempt += 1
            continue
        seen.add(key)
        pool.silhouettes.append(sil)
        pool.source_tags.append("procedural")
        i += 1
        attempt = 0
    return pool


def import_silhouettes(directory) -> SilhouettePool:
    """Threshold grayscale renders at 0.5 (dark foreground), keep the largest
    connected component, tight-crop. Images with an empty foreground are
    skipped with a warning."""
    d = Path(directory)
    paths = sorted(p for p in d.iterdir() if p.is_file()) if d.is_dir() else []
    if not paths:
        raise PoolError(f"no images found in {directory}")
    pool = SilhouettePool()
    skipped = 0
    for p in paths:
        gray = imgio.load_gray_png(p)
        fg = gray < 0.5
        if not fg.any():
            skipped += 1
            continue
        labels, nlab = ndimage.label(fg)
        if nlab > 1:
            sizes = ndimage.sum_labels(np.ones_like(labels), labels, range(1, nlab + 1))
            fg = labels == (1 + int(np.argmax(sizes)))
        sil = tight_crop(fg.astype(np.float32)[:, :, None])
        pool.silhouettes.append(sil)
        pool.source_tags.append("imported")
    if skipped:
        log.warning("import_silhouettes: skipped %d image(s) with empty foreground",
                    skipped)
    return pool


def sample_aligned(pool: SilhouettePool, reference_mask: np.ndarray,
                   rng_seed: int, jitter: bool = True) -> np.ndarray:
    """Uniformly pick a silhouette and fit it to the reference mask's bbox.

    Jitter: scale x U[0.9,1.1], translation within +-10% of the box size.
    Output has the reference mask's full frame dimensions.
    """
    if pool.count < 1:
        raise EmptyPoolError("cannot sample from an empty pool")
    bb = mask_bbox(reference_mask)
    if bb is None:
        raise PoolError("reference mask is empty")
    r0, r1, c0, c1 = bb
    bh, bw = r1 - r0, c1 - c0
    rng = np.random.default_rng(rng_seed)
    sil = pool.silhouettes[int(rng.integers(pool.count))]
    if jitter:
        s = rng.uniform(0.9, 1.1)
        dy = rng.uniform(-0.1, 0.1) * bh
        dx = rng.uniform(-0.1, 0.1) * bw
    else:
        s, dy, dx = 1.0, 0.0, 0.0
    th = max(1, int(round(bh * s)))
    tw = max(1, int(round(bw * s)))
    placed = resize_mask_nearest(sil, th, tw)
    out = np.zeros(reference_mask.shape[:2] + (1,), dtype=np.float32)
    top = r0 + (bh - th) // 2 + int(round(dy))
    left = c0 + (bw - tw) // 2 + int(round(dx))
    rb0, rb1 = max(top, 0), min(top + th, out.shape[0])
    cb0, cb1 = max(left, 0), min(left + tw, out.shape[1])
    if rb0 < rb1 and cb0 < cb1:
        win = placed[rb0 - top:rb1 - top, cb0 - left:cb1 - left]
        out[rb0:rb1, cb0:cb1] = (win >= 0.5).astype(np.float32)
    return out


def save_pool(pool: SilhouettePool, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, (sil, tag) in enumerate(zip(pool.silhouettes, pool.source_tags)):
        imgio.save_mask_png(d / f"sil_{i:06d}_{tag}.png", sil)


def load_pool(directory) -> SilhouettePool:
    d = Path(directory)
    paths = sorted(d.glob("sil_*.png"))
    if not paths:
        raise PoolError(f"no silhouettes found in {directory}")
    pool = SilhouettePool()
    for p in paths:
        pool.silhouettes.append(imgio.load_mask_png(p))
        pool.source_tags.append(p.stem.rsplit("_", 1)[-1])
    return pool
