"""Figures written next to the CSV reports."""
from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.6),
    "figure.dpi": 120,
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.fontsize": 8,
    "legend.frameon": False,
}


def _smooth(y: np.ndarray, window: int) -> np.ndarray:
    if window <= 1 or len(y) < window:
        return y
    kernel = np.ones(window) / window
    return np.convolve(y, kernel, mode="valid")


def plot_loss_curve(rows, path, window: int = 50) -> Path:
    """L1 loss per iteration (raw and running mean) from ``epoch,iter,lr,loss`` rows."""
    path = Path(path)
    loss = np.array([r[3] for r in rows], dtype=float)
    steps = np.arange(1, len(loss) + 1)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(steps, loss, lw=0.5, alpha=0.35, color="C0", label="per iteration")
        sm = _smooth(loss, window)
        if len(sm) != len(loss):
            ax.plot(steps[window - 1:], sm, lw=1.2, color="C0", label=f"mean of {window}")
        ax.set_xlabel("iteration")
        ax.set_ylabel("L1 loss")
        if len(loss) and loss.min() > 0:
            ax.set_yscale("log")
        ax.legend(loc="upper right")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_eval_report(report, path) -> Path:
    """Per-image PSNR bars with the mean as a dashed line."""
    path = Path(path)
    names = [r[0] for r in report.rows]
    values = [r[1] for r in report.rows]
    finite = [v for v in values if math.isfinite(v)]
    cap = (max(finite) + 5.0) if finite else 100.0
    shown = [v if math.isfinite(v) else cap for v in values]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.45 * len(names) + 2.0), 3.6))
        bars = ax.bar(range(len(names)), shown, color="C0")
        for bar, v in zip(bars, values):
            if not math.isfinite(v):
                bar.set_hatch("//")
        if finite:
            ax.axhline(report.mean_psnr, ls="--", lw=1, color="C3",
                       label=f"mean {report.mean_psnr:.2f} dB")
            ax.legend(loc="lower right")
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=45, ha="right")
        ax.set_ylabel("PSNR (dB, Y)")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path
