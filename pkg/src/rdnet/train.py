"""L1 / Adam training loop with random aligned patches and dihedral augmentation."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import model as M
from .errors import DimensionError, InputError
from .tensor import ConvWeights, dihedral

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch: int = 16
    patch_lq: int = 48
    lr0: float = 1e-4
    halve_every: int = 200
    iters_per_epoch: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    max_epochs: int = 200
    ckpt_every: int = 1

    def __post_init__(self):
        for name in ("batch", "patch_lq", "halve_every", "iters_per_epoch", "max_epochs", "ckpt_every"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.lr0 <= 0 or self.eps <= 0 or not (0 <= self.beta1 < 1) or not (0 <= self.beta2 < 1):
            raise InputError("lr0 and eps must be positive, betas in [0, 1)")


@dataclass
class AdamState:
    m: dict[str, ConvWeights]
    v: dict[str, ConvWeights]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, ConvWeights]) -> "AdamState":
        def z():
            return {k: ConvWeights(np.zeros_like(w.kernel), np.zeros_like(w.bias)) for k, w in params.items()}
        return cls(z(), z(), 0)


def l1_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean absolute error and its gradient sign(pred - target) / N."""
    if pred.shape != target.shape:
        raise DimensionError(f"l1_loss: {pred.shape} vs {target.shape}")
    diff = pred - target
    n = diff.size
    loss = float(np.mean(np.abs(diff, dtype=np.float64)))
    return loss, (np.sign(diff) / n).astype(pred.dtype)


def adam_step(params: dict[str, ConvWeights], grads: dict[str, ConvWeights], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update, applied in place. Returns (params, state)."""
    if set(grads) != set(params):
        raise DimensionError("adam_step: gradient keys differ from parameter keys")
    state.t += 1
    t = state.t
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, w in params.items():
        g, m, v = grads[name], state.m[name], state.v[name]
        for attr in ("kernel", "bias"):
            p_arr, g_arr = getattr(w, attr), getattr(g, attr)
            m_arr, v_arr = getattr(m, attr), getattr(v, attr)
            if g_arr.shape != p_arr.shape:
                raise DimensionError(f"adam_step: {name}.{attr} grad {g_arr.shape} vs {p_arr.shape}")
            m_arr *= beta1
            m_arr += (1.0 - beta1) * g_arr
            v_arr *= beta2
            v_arr += (1.0 - beta2) * (g_arr * g_arr)
            p_arr -= (lr * (m_arr / c1) / (np.sqrt(v_arr / c2) + eps)).astype(p_arr.dtype)
    return params, state


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    if epoch < 0:
        raise InputError(f"epoch must be >= 0, got {epoch}")
    return cfg.lr0 * 0.5 ** (epoch // cfg.halve_every)


def sample_patch(lq: np.ndarray, hq: np.ndarray, scale: int, patch: int,
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Aligned random crop: ``patch`` x ``patch`` from LQ, scaled crop from HQ."""
    h, w = lq.shape[-2:]
    if hq.shape[-2:] != (h * scale, w * scale):
        raise InputError(f"HQ size {hq.shape[-2:]} is not LQ size {(h, w)} times {scale}")
    if h < patch or w < patch:
        raise InputError(f"LQ image {h}x{w} is smaller than the {patch}x{patch} patch")
    y = int(rng.integers(0, h - patch + 1))
    x = int(rng.integers(0, w - patch + 1))
    hp = patch * scale
    return (lq[..., y:y + patch, x:x + patch].copy(),
            hq[..., y * scale:y * scale + hp, x * scale:x * scale + hp].copy())


def augment(lq: np.ndarray, hq: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Apply one uniformly chosen flip/rotation to both patches."""
    k = int(rng.integers(0, 8))
    return dihedral(lq, k), dihedral(hq, k)


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    # one stream per epoch so a resumed run draws the same patches
    return np.random.default_rng([seed, epoch])


def make_batch(pairs: Sequence[tuple[np.ndarray, np.ndarray]], scale: int, tcfg: TrainConfig,
               rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    lqs, hqs = [], []
    for _ in range(tcfg.batch):
        lq, hq = pairs[int(rng.integers(0, len(pairs)))]
        lq_p, hq_p = augment(*sample_patch(lq, hq, scale, tcfg.patch_lq, rng), rng)
        lqs.append(lq_p)
        hqs.append(hq_p)
    return np.stack(lqs).astype(np.float32), np.stack(hqs).astype(np.float32)


@dataclass
class TrainResult:
    params: dict[str, ConvWeights]
    state: AdamState
    epoch: int
    losses: list[tuple[int, int, float, float]] = field(default_factory=list)


LOSS_HEADER = ("epoch", "iter", "lr", "loss")


def train(cfg: M.RdnConfig, pairs: Sequence[tuple[np.ndarray, np.ndarray]], tcfg: TrainConfig, *,
          params: dict[str, ConvWeights] | None = None, state: AdamState | None = None,
          start_epoch: int = 0, ckpt_dir=None, log_path=None,
          on_iter: Callable[[int, int, float], None] | None = None) -> TrainResult:
    """Run epochs ``start_epoch .. tcfg.max_epochs - 1``.

    ``pairs`` holds (lq, hq) planar images. Checkpoints go to ``ckpt_dir``
    every ``tcfg.ckpt_every`` epochs; losses are appended to ``log_path``.
    """
    from .checkpoint import save_checkpoint

    if not pairs:
        raise InputError("training set is empty")
    side = min(min(hq.shape[-2:]) for _, hq in pairs)
    if tcfg.patch_lq * cfg.scale > side:
        raise InputError(f"patch {tcfg.patch_lq} x scale {cfg.scale} exceeds smallest HQ side {side}")
    for lq, hq in pairs:
        if lq.shape[0] != cfg.in_channels or hq.shape[0] != cfg.out_channels:
            raise InputError(f"image channels {lq.shape[0]}/{hq.shape[0]} do not match the model")

    if params is None:
        params = M.init_params(cfg, tcfg.seed)
    M.check_params(params, cfg)
    if state is None:
        state = AdamState.zeros_like(params)

    log_fh = writer = None
    if log_path is not None:
        log_path = Path(log_path)
        fresh = not log_path.exists() or log_path.stat().st_size == 0
        log_fh = open(log_path, "a", newline="")
        writer = csv.writer(log_fh)
        if fresh:
            writer.writerow(LOSS_HEADER)

    result = TrainResult(params, state, start_epoch)
    trace = M.Trace()
    try:
        for epoch in range(start_epoch, tcfg.max_epochs):
            rng = epoch_rng(tcfg.seed, epoch)
            lr = lr_schedule(epoch, tcfg)
            t0 = time.perf_counter()
            for it in range(tcfg.iters_per_epoch):
                lq, hq = make_batch(pairs, cfg.scale, tcfg, rng)
                pred = M.rdn_forward(lq, params, cfg, trace)
                loss, grad = l1_loss(pred, hq)
                grads, _ = M.rdn_backward(grad, trace)
                trace.clear()
                adam_step(params, grads, state, lr, tcfg.beta1, tcfg.beta2, tcfg.eps)
                result.losses.append((epoch, it, lr, loss))
                if writer is not None:
                    writer.writerow([epoch, it, repr(lr), repr(loss)])
                if on_iter is not None:
                    on_iter(epoch, it, loss)
            result.epoch = epoch + 1
            if log_fh is not None:
                log_fh.flush()
            log.info("epoch %d done in %.1fs, lr=%g, last loss=%.5f",
                     epoch, time.perf_counter() - t0, lr, result.losses[-1][3])
            if ckpt_dir is not None and ((epoch + 1) % tcfg.ckpt_every == 0 or epoch + 1 == tcfg.max_epochs):
                ckpt_dir = Path(ckpt_dir)
                ckpt_dir.mkdir(parents=True, exist_ok=True)
                save_checkpoint(ckpt_dir / f"epoch_{epoch + 1:04d}.ckpt", params, cfg,
                                state=state, epoch=epoch + 1)
    finally:
        if log_fh is not None:
            log_fh.close()
    return result


def read_loss_log(path) -> list[tuple[int, int, float, float]]:
    with open(path, newline="") as fh:
        return [(int(r["epoch"]), int(r["iter"]), float(r["lr"]), float(r["loss"]))
                for r in csv.DictReader(fh)]
