"""Residual dense network: configuration, parameters, forward and backward.

Parameter names::

    sfe1, sfe2                    shallow feature extraction (3x3)
    rdb.{d}.conv.{c}              c-th densely connected 3x3 conv of block d
    rdb.{d}.lff                   local feature fusion (1x1)
    gff.1x1, gff.3x3              global feature fusion
    upnet.{i}                     i-th sub-pixel stage conv (SR topology only)
    final                         reconstruction conv

All indices are zero-based.
"""
from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import tensor as T
from .errors import DimensionError, InputError, StateError
from .tensor import ConvWeights

SR = "SR"
SAME_RES = "SameRes"
SCALES = (1, 2, 3, 4, 8)

Params = dict[str, ConvWeights]


@dataclass(frozen=True)
class Ablation:
    cm: bool = True
    lrl: bool = True
    gff: bool = True
    lff: bool = True

    @property
    def name(self) -> str:
        return f"RDN_CM{int(self.cm)}LRL{int(self.lrl)}GFF{int(self.gff)}"


ALL_ABLATIONS = tuple(
    Ablation(cm=bool(cm), lrl=bool(lrl), gff=bool(gff))
    for cm in (0, 1) for lrl in (0, 1) for gff in (0, 1)
)


@dataclass(frozen=True)
class RdnConfig:
    d_blocks: int = 16
    c_layers: int = 8
    growth: int = 64
    g0: int = 64
    scale: int = 2
    topology: str = SR
    ablation: Ablation = field(default_factory=Ablation)
    in_channels: int = 3
    out_channels: int = 3

    def __post_init__(self):
        for name in ("d_blocks", "c_layers", "growth", "g0", "in_channels", "out_channels"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.topology not in (SR, SAME_RES):
            raise InputError(f"unknown topology {self.topology!r}")
        if self.scale not in SCALES:
            raise InputError(f"scale must be one of {SCALES}, got {self.scale}")
        if (self.scale == 1) != (self.topology == SAME_RES):
            raise InputError("scale 1 is used exactly by the SameRes topology")
        if not self.ablation.lff:
            raise InputError("local feature fusion cannot be disabled")
        if self.topology == SAME_RES and self.in_channels != self.out_channels:
            raise InputError("SameRes topology needs in_channels == out_channels for the global residual")


def upscale_stages(scale: int) -> list[int]:
    """Sub-pixel factors applied in sequence: x4 and x8 chain x2 stages."""
    if scale == 1:
        return []
    if scale in (2, 3):
        return [scale]
    if scale == 4:
        return [2, 2]
    if scale == 8:
        return [2, 2, 2]
    raise InputError(f"unsupported scale {scale}")


def conv_in_channels(cfg: RdnConfig, c: int) -> int:
    """Input width of the c-th (zero-based) conv inside a block."""
    if cfg.ablation.cm:
        return cfg.g0 + c * cfg.growth
    return cfg.g0 if c == 0 else c * cfg.growth


def lff_in_channels(cfg: RdnConfig) -> int:
    if cfg.ablation.cm:
        return cfg.g0 + cfg.c_layers * cfg.growth
    return cfg.c_layers * cfg.growth


def param_shapes(cfg: RdnConfig) -> dict[str, tuple[int, int, int]]:
    """Map each parameter name to (out_ch, in_ch, kernel size), in canonical order."""
    g0 = cfg.g0
    shapes = {"sfe1": (g0, cfg.in_channels, 3), "sfe2": (g0, g0, 3)}
    for d in range(cfg.d_blocks):
        for c in range(cfg.c_layers):
            shapes[f"rdb.{d}.conv.{c}"] = (cfg.growth, conv_in_channels(cfg, c), 3)
        shapes[f"rdb.{d}.lff"] = (g0, lff_in_channels(cfg), 1)
    if cfg.ablation.gff:
        shapes["gff.1x1"] = (g0, cfg.d_blocks * g0, 1)
        shapes["gff.3x3"] = (g0, g0, 3)
    for i, r in enumerate(upscale_stages(cfg.scale)):
        shapes[f"upnet.{i}"] = (g0 * r * r, g0, 3)
    shapes["final"] = (cfg.out_channels, g0, 3)
    return shapes


INIT_SCHEMES = ("he", "torch")


def init_params(cfg: RdnConfig, seed: int = 0, dtype=T.DTYPE, scheme: str = "he") -> Params:
    """Random parameters, deterministic in ``seed``.

    ``"he"``: kernels ~ Normal(0, 2 / fan_in), zero biases.
    ``"torch"``: kernels and biases ~ Uniform(+-1/sqrt(fan_in)), the Torch7
    / PyTorch conv default; its variance is a sixth of He's, which keeps the
    summed residual branches of an untrained RDN at a sane output scale.
    """
    if scheme not in INIT_SCHEMES:
        raise InputError(f"unknown init scheme {scheme!r}; expected one of {INIT_SCHEMES}")
    rng = np.random.default_rng(seed)
    params = {}
    for name, (o, i, k) in param_shapes(cfg).items():
        fan_in = i * k * k
        if scheme == "he":
            kernel = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(o, i, k, k))
            bias = np.zeros(o)
        else:
            bound = 1.0 / np.sqrt(fan_in)
            kernel = rng.uniform(-bound, bound, size=(o, i, k, k))
            bias = rng.uniform(-bound, bound, size=o)
        params[name] = ConvWeights(kernel.astype(dtype), bias.astype(dtype))
    return params


def zero_params(cfg: RdnConfig, dtype=T.DTYPE) -> Params:
    return {
        name: ConvWeights(np.zeros((o, i, k, k), dtype=dtype), np.zeros(o, dtype=dtype))
        for name, (o, i, k) in param_shapes(cfg).items()
    }


def check_params(params: Mapping[str, ConvWeights], cfg: RdnConfig) -> None:
    """Raise DimensionError unless ``params`` has exactly the layout of ``cfg``."""
    shapes = param_shapes(cfg)
    if set(params) != set(shapes):
        missing = sorted(set(shapes) - set(params))
        extra = sorted(set(params) - set(shapes))
        raise DimensionError(f"parameter keys differ from config: missing={missing} extra={extra}")
    for name, (o, i, k) in shapes.items():
        if params[name].kernel.shape != (o, i, k, k):
            raise DimensionError(f"{name}: kernel {params[name].kernel.shape} != {(o, i, k, k)}")


def scalar_count(params: Mapping[str, ConvWeights]) -> int:
    return sum(w.size for w in params.values())


def count_params(cfg: RdnConfig) -> int:
    """Closed-form number of learnable scalars (kernels and biases)."""
    g0, g, c_n, d_n = cfg.g0, cfg.growth, cfg.c_layers, cfg.d_blocks
    cm = cfg.ablation.cm
    total = 9 * cfg.in_channels * g0 + g0          # sfe1
    total += 9 * g0 * g0 + g0                      # sfe2
    block = 0
    for c in range(1, c_n + 1):
        fan = g0 + (c - 1) * g if cm else (g0 if c == 1 else (c - 1) * g)
        block += 9 * g * fan + g
    block += (g0 + c_n * g if cm else c_n * g) * g0 + g0
    total += d_n * block
    if cfg.ablation.gff:
        total += d_n * g0 * g0 + g0 + 9 * g0 * g0 + g0
    for r in upscale_stages(cfg.scale):
        total += 9 * g0 * g0 * r * r + g0 * r * r
    total += 9 * g0 * cfg.out_channels + cfg.out_channels
    return total


_ABLATION_NAME = re.compile(r"^(?:RDN_)?CM([01])LRL([01])GFF([01])$")


def apply_ablation(cfg: RdnConfig, flags) -> RdnConfig:
    """Return ``cfg`` with the CM/LRL/GFF switches set from ``flags``.

    ``flags`` may be an :class:`Ablation`, a mapping with any of the keys
    ``cm``, ``lrl``, ``gff``, or a name such as ``"RDN_CM0LRL1GFF0"``.
    LFF always stays on.
    """
    if isinstance(flags, Ablation):
        ab = dataclasses.replace(flags, lff=True)
    elif isinstance(flags, str):
        m = _ABLATION_NAME.match(flags)
        if not m:
            raise InputError(f"cannot parse ablation name {flags!r}")
        ab = Ablation(cm=m[1] == "1", lrl=m[2] == "1", gff=m[3] == "1")
    else:
        unknown = set(flags) - {"cm", "lrl", "gff"}
        if unknown:
            raise InputError(f"unknown ablation flags {sorted(unknown)}")
        ab = dataclasses.replace(cfg.ablation, lff=True, **{k: bool(v) for k, v in flags.items()})
    return dataclasses.replace(cfg, ablation=ab)


# ---------------------------------------------------------------------------
# forward / backward

def _block(params: Mapping[str, ConvWeights], d: int, cfg: RdnConfig) -> dict[str, ConvWeights]:
    prefix = f"rdb.{d}."
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}


def _dense_inputs(feats: list[np.ndarray], c: int, cm: bool) -> list[np.ndarray]:
    # feats[0] is the block input, feats[j] the output of conv j-1
    if cm:
        return feats[:c + 1]
    return [feats[0]] if c == 0 else feats[1:c + 1]


def rdb_forward(x: np.ndarray, block: Mapping[str, ConvWeights], cfg: RdnConfig,
                cache: dict | None = None) -> np.ndarray:
    """One residual dense block. ``block`` keys are ``conv.{c}`` and ``lff``.

    When ``cache`` is a dict it is filled with what rdb_backward needs.
    """
    if x.shape[1] != cfg.g0:
        raise DimensionError(f"rdb_forward: input has {x.shape[1]} channels, expected g0={cfg.g0}")
    cm = cfg.ablation.cm
    feats = [x]
    inputs, pre = [], []
    for c in range(cfg.c_layers):
        parts = _dense_inputs(feats, c, cm)
        inp = T.concat_channels(parts) if len(parts) > 1 else parts[0]
        z = T.conv2d_forward(inp, block[f"conv.{c}"], 1)
        feats.append(T.relu_forward(z))
        inputs.append(inp)
        pre.append(z)
    fused_parts = feats if cm else feats[1:]
    fused_in = T.concat_channels(fused_parts) if len(fused_parts) > 1 else fused_parts[0]
    local = T.conv2d_forward(fused_in, block["lff"], 0)
    out = T.add(x, local) if cfg.ablation.lrl else local
    if cache is not None:
        cache.update(x=x, inputs=inputs, pre=pre, fused_in=fused_in)
    return out


def rdb_backward(grad_out: np.ndarray, block: Mapping[str, ConvWeights], cfg: RdnConfig,
                 cache: dict) -> tuple[np.ndarray, dict[str, ConvWeights]]:
    cm = cfg.ablation.cm
    n_c = cfg.c_layers
    grads: dict[str, ConvWeights] = {}
    gfeat: list[np.ndarray | float] = [0.0] * (n_c + 1)

    g_fused, grads["lff"] = T.conv2d_backward(cache["fused_in"], block["lff"], grad_out, 0)
    idx = list(range(n_c + 1)) if cm else list(range(1, n_c + 1))
    sizes = [cfg.g0 if j == 0 else cfg.growth for j in idx]
    for j, g in zip(idx, T.split_channels_backward(g_fused, sizes)):
        gfeat[j] = gfeat[j] + g

    for c in reversed(range(n_c)):
        gz = T.relu_backward(cache["pre"][c], gfeat[c + 1])
        g_in, grads[f"conv.{c}"] = T.conv2d_backward(cache["inputs"][c], block[f"conv.{c}"], gz, 1)
        idx = list(range(c + 1)) if cm else ([0] if c == 0 else list(range(1, c + 1)))
        sizes = [cfg.g0 if j == 0 else cfg.growth for j in idx]
        for j, g in zip(idx, T.split_channels_backward(g_in, sizes)):
            gfeat[j] = gfeat[j] + g

    grad_x = gfeat[0]
    if cfg.ablation.lrl:
        grad_x = grad_x + grad_out
    return grad_x, grads


class Trace:
    """Activations retained by rdn_forward for a later rdn_backward call."""

    def __init__(self):
        self.filled = False
        self.data: dict = {}

    def clear(self):
        self.filled = False
        self.data = {}


def rdn_forward(x: np.ndarray, params: Mapping[str, ConvWeights], cfg: RdnConfig,
                trace: Trace | None = None) -> np.ndarray:
    """Map a low-quality batch to the restored batch.

    Pass a :class:`Trace` to retain activations for :func:`rdn_backward`.
    """
    T._check4(x, "rdn_forward")
    if x.shape[1] != cfg.in_channels:
        raise DimensionError(f"rdn_forward: input has {x.shape[1]} channels, expected {cfg.in_channels}")
    if x.shape[2] < 3 or x.shape[3] < 3:
        raise DimensionError(f"rdn_forward: input {x.shape[2:]} smaller than the 3x3 kernel support")
    keep = trace is not None
    f_shallow = T.conv2d_forward(x, params["sfe1"], 1)
    h = T.conv2d_forward(f_shallow, params["sfe2"], 1)
    block_feats, block_caches = [], []
    for d in range(cfg.d_blocks):
        cache = {} if keep else None
        h = rdb_forward(h, _block(params, d, cfg), cfg, cache)
        block_feats.append(h)
        block_caches.append(cache)
    if cfg.ablation.gff:
        gcat = T.concat_channels(block_feats) if cfg.d_blocks > 1 else block_feats[0]
        g1 = T.conv2d_forward(gcat, params["gff.1x1"], 0)
        f_global = T.conv2d_forward(g1, params["gff.3x3"], 1)
    else:
        gcat = g1 = None
        f_global = block_feats[-1]
    h = T.add(f_shallow, f_global)
    up_inputs = []
    for i, r in enumerate(upscale_stages(cfg.scale)):
        up_inputs.append(h)
        h = T.pixel_shuffle(T.conv2d_forward(h, params[f"upnet.{i}"], 1), r)
    final_in = h
    out = T.conv2d_forward(final_in, params["final"], 1)
    if cfg.topology == SAME_RES:
        out = T.add(out, x)
    if keep:
        trace.data = dict(x=x, f_shallow=f_shallow,
                          block_caches=block_caches, gcat=gcat, g1=g1,
                          up_inputs=up_inputs, final_in=final_in, params=params, cfg=cfg)
        trace.filled = True
    return out


def rdn_backward(grad_out: np.ndarray, trace: Trace | None) -> tuple[Params, np.ndarray]:
    """Reverse-mode pass. Returns (parameter gradients, gradient w.r.t. the input)."""
    if trace is None or not trace.filled:
        raise StateError("rdn_backward needs a Trace filled by rdn_forward")
    s = trace.data
    params, cfg = s["params"], s["cfg"]
    grads: Params = {}

    g_final_in, grads["final"] = T.conv2d_backward(s["final_in"], params["final"], grad_out, 1)
    g = g_final_in
    stages = upscale_stages(cfg.scale)
    for i in reversed(range(len(stages))):
        g = T.pixel_unshuffle_backward(g, stages[i])
        g, grads[f"upnet.{i}"] = T.conv2d_backward(s["up_inputs"][i], params[f"upnet.{i}"], g, 1)

    g_shallow = g
    g_blocks = [0.0] * cfg.d_blocks
    if cfg.ablation.gff:
        g_g1, grads["gff.3x3"] = T.conv2d_backward(s["g1"], params["gff.3x3"], g, 1)
        g_cat, grads["gff.1x1"] = T.conv2d_backward(s["gcat"], params["gff.1x1"], g_g1, 0)
        g_blocks = T.split_channels_backward(g_cat, [cfg.g0] * cfg.d_blocks)
    else:
        g_blocks[-1] = g

    g_h = 0.0
    for d in reversed(range(cfg.d_blocks)):
        g_h = g_h + g_blocks[d]
        g_h, bgrads = rdb_backward(g_h, _block(params, d, cfg), cfg, s["block_caches"][d])
        for k, v in bgrads.items():
            grads[f"rdb.{d}.{k}"] = v

    g_shallow2, grads["sfe2"] = T.conv2d_backward(s["f_shallow"], params["sfe2"], g_h, 1)
    g_shallow = g_shallow + g_shallow2
    grad_x, grads["sfe1"] = T.conv2d_backward(s["x"], params["sfe1"], g_shallow, 1)
    if cfg.topology == SAME_RES:
        grad_x = grad_x + grad_out
    ordered = {name: grads[name] for name in param_shapes(cfg)}
    return ordered, grad_x
