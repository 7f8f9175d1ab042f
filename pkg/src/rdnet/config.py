"""Flat ``key=value`` run configuration files.

Blank lines and anything after ``#`` are ignored. Unknown keys are rejected.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from . import model as M
from .degrade import KINDS, DegradationSpec
from .errors import ConfigError, RdnError
from .train import TrainConfig

TASKS = ("sr", "dn", "car", "deblur")
_TASK_DEFAULT_DEGRADATION = {"sr": "BI", "dn": "AWGN", "deblur": "DEBLUR", "car": None}

_BOOL_KEYS = {"cm", "lrl", "gff"}
_INT_KEYS = {"d", "c", "g", "g0", "scale", "channels", "batch", "patch", "halve_every",
             "iters_per_epoch", "max_epochs", "seed", "ckpt_every"}
_FLOAT_KEYS = {"lr0", "sigma"}
_STR_KEYS = {"task", "train_dir", "test_dir", "hq_dir", "lq_dir", "degradation",
             "ckpt_dir", "report_path", "init"}
KEYS = _BOOL_KEYS | _INT_KEYS | _FLOAT_KEYS | _STR_KEYS


@dataclass
class RunConfig:
    task: str = "sr"
    # model
    d: int = 16
    c: int = 8
    g: int = 64
    g0: int = 64
    scale: int = 2
    cm: bool = True
    lrl: bool = True
    gff: bool = True
    channels: int = 3
    init: str = "he"
    # training
    batch: int = 16
    patch: int = 48
    lr0: float = 1e-4
    halve_every: int = 200
    iters_per_epoch: int = 1000
    max_epochs: int = 200
    seed: int = 0
    ckpt_every: int = 1
    # data
    train_dir: str | None = None
    test_dir: str | None = None
    hq_dir: str | None = None
    lq_dir: str | None = None
    degradation: str | None = None
    sigma: float | None = None
    # io
    ckpt_dir: str | None = None
    report_path: str | None = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.degradation is not None and self.degradation.upper() not in KINDS:
            raise ConfigError(f"degradation must be one of {KINDS}, got {self.degradation!r}")
        if self.init not in M.INIT_SCHEMES:
            raise ConfigError(f"init must be one of {M.INIT_SCHEMES}, got {self.init!r}")

    def require(self, *keys: str) -> None:
        for key in keys:
            if getattr(self, key) in (None, ""):
                raise ConfigError(f"missing required config key: {key}")

    def model_config(self) -> M.RdnConfig:
        same_res = self.task != "sr"
        try:
            return M.RdnConfig(
                d_blocks=self.d, c_layers=self.c, growth=self.g, g0=self.g0,
                scale=1 if same_res else self.scale,
                topology=M.SAME_RES if same_res else M.SR,
                ablation=M.Ablation(cm=self.cm, lrl=self.lrl, gff=self.gff),
                in_channels=self.channels, out_channels=self.channels)
        except RdnError as exc:
            raise ConfigError(str(exc)) from exc

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig(batch=self.batch, patch_lq=self.patch, lr0=self.lr0,
                               halve_every=self.halve_every, iters_per_epoch=self.iters_per_epoch,
                               max_epochs=self.max_epochs, seed=self.seed, ckpt_every=self.ckpt_every)
        except RdnError as exc:
            raise ConfigError(str(exc)) from exc

    def degradation_spec(self) -> DegradationSpec | None:
        kind = self.degradation or _TASK_DEFAULT_DEGRADATION[self.task]
        if kind is None:
            return None
        scale = self.scale if kind.upper() in ("BI", "BD", "DN") else None
        try:
            return DegradationSpec.standard(kind, scale=scale, sigma=self.sigma, seed=self.seed)
        except RdnError as exc:
            raise ConfigError(str(exc)) from exc

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            if isinstance(value, bool):
                value = int(value)
            lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"


def _convert(key: str, raw: str, lineno: int):
    try:
        if key in _BOOL_KEYS:
            if raw.lower() not in ("0", "1", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return raw.lower() in ("1", "true", "yes", "on")
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value {raw!r} for {key}") from None
    return raw


def parse_config(text: str) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _convert(key, raw, lineno)
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
