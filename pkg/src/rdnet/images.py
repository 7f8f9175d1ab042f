"""8-bit image file I/O.

In memory an image is a planar float32 array (c, h, w) with c in {1, 3} and
values nominally in [0, 1]. Files are 8-bit PNG or binary PPM/PGM.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import InputError

IMAGE_SUFFIXES = (".png", ".ppm", ".pgm", ".pnm")


def read_image(path) -> np.ndarray:
    path = Path(path)
    try:
        with PILImage.open(path) as im:
            im.load()
            if im.mode not in ("L", "RGB"):
                im = im.convert("L" if im.mode in ("1", "I", "I;16", "F", "LA") else "RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return arr.astype(np.float32) / 255.0


def quantize(img: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and round half away from zero onto 0..255."""
    v = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0
    return np.floor(v + 0.5).astype(np.uint8)


def write_image(path, img: np.ndarray) -> None:
    path = Path(path)
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise InputError(f"expected a (c, h, w) image with c in (1, 3), got {img.shape}")
    q = quantize(img)
    if path.suffix.lower() == ".ppm" and q.shape[0] == 1:
        q = np.repeat(q, 3, axis=0)
    data = q[0] if q.shape[0] == 1 else q.transpose(1, 2, 0)
    path.parent.mkdir(parents=True, exist_ok=True)
    fmt = "PPM" if path.suffix.lower() in (".ppm", ".pgm", ".pnm") else "PNG"
    PILImage.fromarray(data).save(path, format=fmt)


def list_images(directory) -> list[Path]:
    directory = Path(directory)
    return sorted(p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def modcrop(img: np.ndarray, modulus: int) -> np.ndarray:
    """Crop the bottom/right edges so both sides are multiples of ``modulus``."""
    h, w = img.shape[-2:]
    return img[..., : h - h % modulus, : w - w % modulus]
