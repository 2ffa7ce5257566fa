"""Shared helpers: deterministic seed derivation and tensor validation."""

import hashlib

import numpy as np


def fold_seed(*parts) -> int:
    """Derive a 64-bit seed from arbitrary hashable parts, stably across runs."""
    h = hashlib.sha256(repr(parts).encode()).digest()
    return int.from_bytes(h[:8], "little")


def rng_for(*parts) -> np.random.Generator:
    return np.random.default_rng(fold_seed(*parts))


def validate_image(a: np.ndarray, name="image") -> None:
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError(f"{name}: expected (H,W,3), got {a.shape}")
    if a.shape[0] < 8 or a.shape[1] < 8:
        raise ValueError(f"{name}: spatial size must be >= 8, got {a.shape[:2]}")
    if not np.isfinite(a).all():
        raise ValueError(f"{name}: contains NaN/Inf")
    if a.min() < 0.0 or a.max() > 1.0:
        raise ValueError(f"{name}: values outside [0,1]")


def validate_mask(a: np.ndarray, binary=True, name="mask") -> None:
    if a.ndim != 3 or a.shape[2] != 1:
        raise ValueError(f"{name}: expected (H,W,1), got {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError(f"{name}: contains NaN/Inf")
    if a.min() < 0.0 or a.max() > 1.0:
        raise ValueError(f"{name}: values outside [0,1]")
    if binary and not np.isin(a, (0.0, 1.0)).all():
        raise ValueError(f"{name}: expected binary values")


def mask_bbox(mask: np.ndarray):
    """Bounding box (r0, r1, c0, c1), end-exclusive, of a (H,W,1) or (H,W) mask.

    Returns None for an empty mask.
    """
    m = mask[..., 0] if mask.ndim == 3 else mask
    rows = np.flatnonzero(m.any(axis=1))
    cols = np.flatnonzero(m.any(axis=0))
    if rows.size == 0:
        return None
    return int(rows[0]), int(rows[-1]) + 1, int(cols[0]), int(cols[-1]) + 1


def quantize8(a: np.ndarray) -> np.ndarray:
    """Snap values in [0,1] to the 8-bit grid so file round trips are exact."""
    return (np.round(np.clip(a, 0.0, 1.0) * 255.0) / 255.0).astype(np.float32)
