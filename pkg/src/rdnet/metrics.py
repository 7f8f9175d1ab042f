"""Y-channel PSNR/SSIM evaluation and geometric self-ensemble."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import signal

from .errors import DimensionError, InputError
from .tensor import dihedral, dihedral_inverse

# Stand-in written to reports when two images are identical.
PSNR_INF = math.inf
PSNR_INF_TEXT = "inf"

SSIM_K1, SSIM_K2 = 0.01, 0.03
SSIM_WINDOW, SSIM_SIGMA = 11, 1.5


def rgb_to_y(img: np.ndarray) -> np.ndarray:
    """BT.601 studio-swing luma of a (3, h, w) image in [0, 1]; gray passes through."""
    img = np.asarray(img)
    if img.shape[0] == 1:
        return img
    if img.shape[0] != 3:
        raise DimensionError(f"expected 1 or 3 channels, got {img.shape[0]}")
    x = img.astype(np.float64)
    y = (65.481 * x[0] + 128.553 * x[1] + 24.966 * x[2] + 16.0) / 255.0
    return y[None].astype(img.dtype if img.dtype.kind == "f" else np.float64)


def _shave(img: np.ndarray, shave: int) -> np.ndarray:
    if shave <= 0:
        return img
    return img[..., shave:-shave, shave:-shave]


def psnr(a: np.ndarray, b: np.ndarray, shave: int = 0) -> float:
    """PSNR in dB for images in [0, 1]; identical inputs give ``inf``."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise DimensionError(f"psnr: shapes {a.shape} and {b.shape} differ")
    diff = _shave(a.astype(np.float64), shave) - _shave(b.astype(np.float64), shave)
    if diff.size == 0:
        raise DimensionError(f"psnr: shave {shave} removes the whole image")
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return PSNR_INF
    return 10.0 * math.log10(1.0 / mse)


def _gauss_window() -> np.ndarray:
    r = np.arange(SSIM_WINDOW, dtype=np.float64) - (SSIM_WINDOW - 1) / 2.0
    g = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2 * SSIM_SIGMA ** 2))
    return g / g.sum()


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM over all fully-covered 11x11 Gaussian windows, dynamic range 1."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"ssim: shapes {a.shape} and {b.shape} differ")
    if a.ndim == 3:
        if a.shape[0] != 1:
            raise InputError("ssim expects a single-channel image; convert with rgb_to_y")
        a, b = a[0], b[0]
    if min(a.shape) < SSIM_WINDOW:
        raise InputError(f"ssim needs both sides >= {SSIM_WINDOW}, got {a.shape}")
    win = _gauss_window()
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2

    def filt(x):
        return signal.correlate2d(x, win, mode="valid")

    mu_a, mu_b = filt(a), filt(b)
    saa = filt(a * a) - mu_a * mu_a
    sbb = filt(b * b) - mu_b * mu_b
    sab = filt(a * b) - mu_a * mu_b
    num = (2 * (mu_a * mu_b) + c1) * (2 * sab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


def self_ensemble(model: Callable[[np.ndarray], np.ndarray], img: np.ndarray) -> np.ndarray:
    """Average ``model`` over the 8 flips/rotations, undoing each on the output.

    ``model`` maps an array whose last two axes are spatial to another such
    array, e.g. a (c, h, w) image or an (n, c, h, w) batch.
    """
    acc = None
    for k in range(8):
        out = dihedral_inverse(np.asarray(model(dihedral(img, k))), k).astype(np.float64)
        acc = out if acc is None else acc + out
    return (acc / 8.0).astype(np.asarray(img).dtype)


@dataclass
class EvalReport:
    rows: list[tuple[str, float, float]] = field(default_factory=list)

    def add(self, name: str, psnr_db: float, ssim_val: float) -> None:
        self.rows.append((name, psnr_db, ssim_val))

    @property
    def mean_psnr(self) -> float:
        finite = [p for _, p, _ in self.rows if math.isfinite(p)]
        return float(np.mean(finite)) if finite else PSNR_INF

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([s for _, _, s in self.rows])) if self.rows else float("nan")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["image", "psnr_db", "ssim"])
            for name, p, s in self.rows:
                w.writerow([name, _fmt_psnr(p), f"{s:.6f}"])
            w.writerow(["MEAN", _fmt_psnr(self.mean_psnr), f"{self.mean_ssim:.6f}"])

    @classmethod
    def read_csv(cls, path) -> "EvalReport":
        report = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                if row["image"] == "MEAN":
                    continue
                report.add(row["image"], float(row["psnr_db"]), float(row["ssim"]))
        return report


def _fmt_psnr(p: float) -> str:
    return PSNR_INF_TEXT if math.isinf(p) else f"{p:.4f}"


def evaluate_pair(pred: np.ndarray, gt: np.ndarray, shave: int = 0) -> tuple[float, float]:
    """Y-channel PSNR and SSIM, both computed after shaving ``shave`` border pixels."""
    py, gy = rgb_to_y(pred), rgb_to_y(gt)
    p = psnr(py, gy, shave)
    s = ssim(_shave(py, shave), _shave(gy, shave))
    return p, s
