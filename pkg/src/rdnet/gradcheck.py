"""Central finite-difference checks of every backward pass, in float64."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import model as M
from . import tensor as T
from .train import l1_loss

EPS = 1e-4
TOL = 1e-5
# gradients smaller than this are compared absolutely rather than relatively
FLOOR = 1e-7
KINK_MARGIN = 1e-3


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    n_checked: int
    n_skipped: int = 0

    @property
    def ok(self) -> bool:
        return self.max_rel_err <= TOL


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    den = np.maximum(np.maximum(np.abs(a), np.abs(b)), FLOOR)
    return float(np.max(np.abs(a - b) / den)) if a.size else 0.0


def numeric_grad(f: Callable[[], float], arr: np.ndarray, eps: float = EPS,
                 indices=None) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. entries of ``arr`` (perturbed in place)."""
    flat = arr.reshape(-1)
    out = np.zeros(flat.size)
    for i in (range(flat.size) if indices is None else indices):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        out[i] = (fp - fm) / (2 * eps)
    return out.reshape(arr.shape)


def check_conv(rng, ksize: int = 3) -> CheckResult:
    x = rng.normal(size=(2, 3, 5, 6))
    w = T.ConvWeights(rng.normal(size=(4, 3, ksize, ksize)), rng.normal(size=4))
    gy = rng.normal(size=(2, 4, 5, 6))

    def f():
        return float(np.sum(T.conv2d_forward(x, w) * gy))

    gx, gw = T.conv2d_backward(x, w, gy)
    errs = [rel_err(gx, numeric_grad(f, x)), rel_err(gw.kernel, numeric_grad(f, w.kernel)),
            rel_err(gw.bias, numeric_grad(f, w.bias))]
    return CheckResult(f"conv2d {ksize}x{ksize}", max(errs), x.size + w.size)


def check_relu(rng) -> CheckResult:
    x = rng.normal(size=(2, 3, 4, 4))
    x[np.abs(x) < 1e-3] = 0.5  # stay away from the kink
    gy = rng.normal(size=x.shape)

    def f():
        return float(np.sum(T.relu_forward(x) * gy))

    return CheckResult("relu", rel_err(T.relu_backward(x, gy), numeric_grad(f, x)), x.size)


def check_concat(rng) -> CheckResult:
    parts = [rng.normal(size=(1, c, 3, 3)) for c in (2, 1, 3)]
    gy = rng.normal(size=(1, 6, 3, 3))
    grads = T.split_channels_backward(gy, [2, 1, 3])
    err = 0.0
    for p, g in zip(parts, grads):
        err = max(err, rel_err(g, numeric_grad(lambda: float(np.sum(T.concat_channels(parts) * gy)), p)))
    return CheckResult("concat/split", err, sum(p.size for p in parts))


def check_add(rng) -> CheckResult:
    a, b = rng.normal(size=(1, 2, 3, 3)), rng.normal(size=(1, 2, 3, 3))
    gy = rng.normal(size=a.shape)

    def f():
        return float(np.sum(T.add(a, b) * gy))

    return CheckResult("add", max(rel_err(gy, numeric_grad(f, a)), rel_err(gy, numeric_grad(f, b))),
                       a.size + b.size)


def check_pixel_shuffle(rng, r: int = 2) -> CheckResult:
    x = rng.normal(size=(2, 2 * r * r, 3, 3))
    gy = rng.normal(size=(2, 2, 3 * r, 3 * r))

    def f():
        return float(np.sum(T.pixel_shuffle(x, r) * gy))

    return CheckResult(f"pixel_shuffle r={r}",
                       rel_err(T.pixel_unshuffle_backward(gy, r), numeric_grad(f, x)), x.size)


def check_l1(rng) -> CheckResult:
    p, t = rng.normal(size=(1, 2, 4, 4)), rng.normal(size=(1, 2, 4, 4))
    _, g = l1_loss(p, t)
    return CheckResult("l1_loss", rel_err(g, numeric_grad(lambda: l1_loss(p, t)[0], p)), p.size)


def tiny_configs() -> list[M.RdnConfig]:
    """One tiny configuration per CM/LRL/GFF combination, mixing topologies."""
    cfgs = []
    for i, ab in enumerate(M.ALL_ABLATIONS):
        if i % 2:
            cfgs.append(M.RdnConfig(d_blocks=2, c_layers=3, growth=4, g0=4, scale=1,
                                    topology=M.SAME_RES, ablation=ab, in_channels=1, out_channels=1))
        else:
            cfgs.append(M.RdnConfig(d_blocks=2, c_layers=3, growth=4, g0=4, scale=2,
                                    topology=M.SR, ablation=ab, in_channels=3, out_channels=3))
    return cfgs


def _relu_signature(trace: M.Trace) -> bytes:
    masks = [z > 0 for cache in trace.data["block_caches"] for z in cache["pre"]]
    return np.packbits(np.concatenate([m.ravel() for m in masks])).tobytes()


def check_model(cfg: M.RdnConfig, seed: int = 0, size: int = 6, corrupt: bool = False,
                per_tensor: int | None = None) -> CheckResult:
    """Compare rdn_backward against central differences of <rdn_forward(x), r>.

    Every weight entry is checked unless ``per_tensor`` limits it to a random
    subset of each tensor. An entry whose +/-eps probes land on different
    sides of some ReLU kink has no usable difference quotient; the probe
    point is drawn to avoid that, and any entry still affected is skipped and
    counted in ``n_skipped``.
    """
    rng = np.random.default_rng(seed)
    params = {k: v.astype(np.float64) for k, v in M.init_params(cfg, seed).items()}
    # redraw biases and input until every ReLU input sits clear of the kink
    for _ in range(100):
        for w in params.values():
            w.bias[:] = rng.normal(scale=0.1, size=w.bias.shape)
        x = rng.normal(size=(1, cfg.in_channels, size, size))
        trace = M.Trace()
        y = M.rdn_forward(x, params, cfg, trace)
        margin = min(np.abs(z).min() for c in trace.data["block_caches"] for z in c["pre"])
        if margin >= KINK_MARGIN:
            break
    r = rng.normal(size=y.shape)
    grads, gx = M.rdn_backward(r, trace)
    if corrupt:
        grads["sfe1"].kernel *= 1.01

    def probe():
        tr = M.Trace()
        val = float(np.sum(M.rdn_forward(x, params, cfg, tr) * r))
        return val, _relu_signature(tr)

    worst, n, skipped = 0.0, 0, 0
    targets = [(params[k].kernel, grads[k].kernel) for k in params]
    targets += [(params[k].bias, grads[k].bias) for k in params]
    targets.append((x, gx))
    for arr, g in targets:
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        idx = range(flat.size)
        if per_tensor is not None and flat.size > per_tensor:
            idx = rng.choice(flat.size, per_tensor, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + EPS
            fp, sp = probe()
            flat[i] = orig - EPS
            fm, sm = probe()
            flat[i] = orig
            if sp != sm:
                skipped += 1
                continue
            worst = max(worst, rel_err(gflat[i], (fp - fm) / (2 * EPS)))
            n += 1
    label = f"rdn {cfg.ablation.name} {cfg.topology} x{cfg.scale}"
    return CheckResult(label, worst, n, skipped)


def run_suite(seed: int = 0, corrupt: bool = False) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = [check_conv(rng, 3), check_conv(rng, 1), check_relu(rng), check_concat(rng),
               check_add(rng), check_pixel_shuffle(rng, 2), check_pixel_shuffle(rng, 3), check_l1(rng)]
    for cfg in tiny_configs():
        results.append(check_model(cfg, seed, corrupt=corrupt))
    return results
