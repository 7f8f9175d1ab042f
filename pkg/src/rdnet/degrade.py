"""Synthesis of low-quality inputs: bicubic / blur-down / noisy-down SR,
additive white Gaussian noise, and Gaussian deblurring.

Images are planar (c, h, w) float32 arrays in [0, 1]. Noise levels are given
on the 0-255 scale and divided by 255 internally.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import InputError

BI, BD, DN, AWGN, DEBLUR = "BI", "BD", "DN", "AWGN", "DEBLUR"
KINDS = (BI, BD, DN, AWGN, DEBLUR)
AWGN_LEVELS = (10, 30, 50, 70)


def cubic(x):
    """Keys cubic convolution kernel with a = -0.5."""
    ax = np.abs(np.asarray(x, dtype=np.float64))
    ax2, ax3 = ax * ax, ax * ax * ax
    return ((1.5 * ax3 - 2.5 * ax2 + 1.0) * (ax <= 1)
            + (-0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0) * ((ax > 1) & (ax <= 2)))


def resize_matrix(in_len: int, out_len: int, antialias: bool = True) -> np.ndarray:
    """Dense (out_len, in_len) resampling matrix along one axis.

    Follows the imresize contribution scheme: output pixel i (1-based)
    samples input coordinate i/s + (1 - 1/s)/2, the kernel is stretched by
    1/s when shrinking, rows are renormalised, and out-of-range taps are
    folded back by symmetric extension.
    """
    scale = out_len / in_len
    if scale < 1 and antialias:
        width = 4.0 / scale
        kernel = lambda t: scale * cubic(scale * t)  # noqa: E731
    else:
        width = 4.0
        kernel = cubic
    x = np.arange(1, out_len + 1, dtype=np.float64)
    u = x / scale + 0.5 * (1.0 - 1.0 / scale)
    left = np.floor(u - width / 2.0)
    taps = int(math.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    weights = kernel(u[:, None] - idx)
    weights /= weights.sum(axis=1, keepdims=True)
    mirror = np.concatenate([np.arange(in_len), np.arange(in_len)[::-1]])
    src = mirror[np.mod(idx.astype(np.int64) - 1, 2 * in_len)]
    mat = np.zeros((out_len, in_len))
    rows = np.repeat(np.arange(out_len), taps)
    np.add.at(mat, (rows, src.ravel()), weights.ravel())
    return mat


def bicubic_resize(img: np.ndarray, out_h: int, out_w: int, antialias: bool = True) -> np.ndarray:
    """Separable bicubic resampling of a (c, h, w) or (h, w) image."""
    if out_h < 1 or out_w < 1:
        raise InputError(f"output size must be positive, got {out_h}x{out_w}")
    arr = np.asarray(img, dtype=np.float64)
    h, w = arr.shape[-2:]
    rows = resize_matrix(h, out_h, antialias)
    cols = resize_matrix(w, out_w, antialias)
    # the axis with the smaller scale goes first, as the reference resizer does
    if out_h / h <= out_w / w:
        out = np.matmul(rows, arr) @ cols.T
    else:
        out = rows @ (arr @ cols.T)
    return out.astype(np.float32)


def gaussian_kernel(size: int, std: float) -> np.ndarray:
    """Normalised isotropic Gaussian of odd ``size`` (fspecial-style)."""
    if size < 1 or size % 2 == 0:
        raise InputError(f"kernel size must be odd and positive, got {size}")
    if std <= 0:
        raise InputError(f"std must be positive, got {std}")
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    sq = r * r
    g = np.exp(-(sq[:, None] + sq[None, :]) / (2.0 * std * std))
    g[g < np.finfo(np.float64).eps * g.max()] = 0.0
    return g / g.sum()


def blur(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Correlate every channel with ``kernel`` using symmetric border extension."""
    arr = np.asarray(img, dtype=np.float64)
    out = np.empty_like(arr)
    for c in range(arr.shape[0]):
        out[c] = ndimage.correlate(arr[c], kernel, mode="reflect")
    return out


def gaussian_noise(shape, sigma: float, seed: int) -> np.ndarray:
    """Zero-mean Gaussian noise with standard deviation ``sigma``.

    Box-Muller on uniforms from a PCG64 stream seeded with ``seed``; only
    the cosine branch is used so element k depends on draws 2k and 2k+1.
    """
    n = int(np.prod(shape))
    rng = np.random.Generator(np.random.PCG64(seed))
    u = rng.random(2 * n).reshape(n, 2)
    radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
    return (sigma * radius * np.cos(2.0 * np.pi * u[:, 1])).reshape(shape)


@dataclass(frozen=True)
class DegradationSpec:
    kind: str
    scale: int = 1
    sigma: float = 0.0
    blur_size: int = 0
    blur_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown degradation {self.kind!r}; expected one of {KINDS}")
        if self.kind in (BI, BD, DN) and self.scale < 2:
            raise InputError(f"{self.kind} needs scale >= 2, got {self.scale}")
        if self.sigma < 0:
            raise InputError(f"noise level must be >= 0, got {self.sigma}")
        if self.kind in (BD, DEBLUR) and (self.blur_size < 1 or self.blur_size % 2 == 0):
            raise InputError(f"blur size must be odd, got {self.blur_size}")

    @classmethod
    def standard(cls, kind: str, scale: int | None = None, sigma: float | None = None,
                 seed: int = 0) -> "DegradationSpec":
        """The published settings for each degradation kind."""
        kind = kind.upper()
        if kind == BI:
            return cls(BI, scale=scale or 2, seed=seed)
        if kind == BD:
            return cls(BD, scale=scale or 3, blur_size=7, blur_std=1.6, seed=seed)
        if kind == DN:
            return cls(DN, scale=scale or 3, sigma=30.0 if sigma is None else sigma, seed=seed)
        if kind == AWGN:
            return cls(AWGN, scale=1, sigma=30.0 if sigma is None else sigma, seed=seed)
        if kind == DEBLUR:
            return cls(DEBLUR, scale=1, sigma=2.0 if sigma is None else sigma,
                       blur_size=25, blur_std=1.6, seed=seed)
        raise InputError(f"unknown degradation {kind!r}; expected one of {KINDS}")


def degrade(img: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Produce the low-quality counterpart of ``img`` under ``spec``."""
    img = np.asarray(img, dtype=np.float32)
    if img.ndim != 3:
        raise InputError(f"expected a (c, h, w) image, got shape {img.shape}")
    h, w = img.shape[1:]
    if spec.kind in (BI, BD, DN) and (h % spec.scale or w % spec.scale):
        raise InputError(f"image size {h}x{w} must be divisible by {spec.scale}; modcrop it first")
    if spec.kind == BI:
        return bicubic_resize(img, h // spec.scale, w // spec.scale)
    if spec.kind == BD:
        blurred = blur(img, gaussian_kernel(spec.blur_size, spec.blur_std))
        return blurred[:, ::spec.scale, ::spec.scale].astype(np.float32)
    if spec.kind == DN:
        low = bicubic_resize(img, h // spec.scale, w // spec.scale).astype(np.float64)
        return (low + gaussian_noise(low.shape, spec.sigma / 255.0, spec.seed)).astype(np.float32)
    if spec.kind == AWGN:
        if spec.sigma == 0:
            return img.copy()
        return (img + gaussian_noise(img.shape, spec.sigma / 255.0, spec.seed)).astype(np.float32)
    blurred = blur(img, gaussian_kernel(spec.blur_size, spec.blur_std))
    return (blurred + gaussian_noise(blurred.shape, spec.sigma / 255.0, spec.seed)).astype(np.float32)
