"""Lossless 8-bit image/mask file IO.

Images are stored as RGB PNG, masks as grayscale PNG with {0,255}.
Float arrays are quantized to the 8-bit grid before writing, and the
reader uses the same float64-divide-then-cast pipeline as
:func:`ovrec.util.quantize8`, so write/read round trips are bit-exact.
"""

import hashlib

import numpy as np
from PIL import Image


def save_image_png(path, img: np.ndarray) -> None:
    arr = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def load_image_png(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("RGB"))
    return (arr / 255.0).astype(np.float32)


def save_mask_png(path, mask: np.ndarray) -> None:
    arr = (np.round(np.clip(mask[..., 0], 0.0, 1.0)) * 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def load_mask_png(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("L"))
    return (arr >= 128).astype(np.float32)[:, :, None]


def load_gray_png(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("L"))
    return (arr / 255.0).astype(np.float32)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
