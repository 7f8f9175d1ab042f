"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"RDNCKPT1"                          magic, 8 bytes
    u32 n, n bytes                       key=value text (config, epoch, adam step)
    u32 count                            number of index entries
    count x (u32 len, name, 4 x u32 dims, u64 offset)
    payload                              float32 LE scalars, offsets relative to its start
    u32 crc32(payload)

Entry names are ``param/<layer>.kernel`` and ``param/<layer>.bias``, plus
``adam.m/...`` and ``adam.v/...`` when optimizer state is stored. Biases are
stored with dims (out, 1, 1, 1).
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from . import model as M
from .errors import FormatError
from .tensor import ConvWeights

MAGIC = b"RDNCKPT1"
_ENTRY = struct.Struct("<4IQ")
_GROUPS = ("param", "adam.m", "adam.v")


def config_to_text(cfg: M.RdnConfig, **extra) -> str:
    ab = cfg.ablation
    items = dict(d_blocks=cfg.d_blocks, c_layers=cfg.c_layers, growth=cfg.growth, g0=cfg.g0,
                 scale=cfg.scale, topology=cfg.topology, cm=int(ab.cm), lrl=int(ab.lrl),
                 gff=int(ab.gff), lff=int(ab.lff), in_channels=cfg.in_channels,
                 out_channels=cfg.out_channels)
    items.update(extra)
    return "".join(f"{k}={v}\n" for k, v in items.items())


def config_from_text(text: str) -> tuple[M.RdnConfig, dict[str, str]]:
    kv = {}
    for line in text.splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            kv[key.strip()] = value.strip()
    try:
        ab = M.Ablation(cm=kv.pop("cm") == "1", lrl=kv.pop("lrl") == "1",
                        gff=kv.pop("gff") == "1", lff=kv.pop("lff") == "1")
        cfg = M.RdnConfig(
            d_blocks=int(kv.pop("d_blocks")), c_layers=int(kv.pop("c_layers")),
            growth=int(kv.pop("growth")), g0=int(kv.pop("g0")), scale=int(kv.pop("scale")),
            topology=kv.pop("topology"), ablation=ab,
            in_channels=int(kv.pop("in_channels")), out_channels=int(kv.pop("out_channels")))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad config block in checkpoint: {exc}") from exc
    return cfg, kv


def _entries(params, state):
    groups = [("param", params)]
    if state is not None:
        groups += [("adam.m", state.m), ("adam.v", state.v)]
    for group, weights in groups:
        for layer, w in weights.items():
            yield f"{group}/{layer}.kernel", w.kernel
            yield f"{group}/{layer}.bias", w.bias.reshape(-1, 1, 1, 1)


def save_checkpoint(path, params: dict[str, ConvWeights], cfg: M.RdnConfig, state=None,
                    epoch: int = 0) -> None:
    M.check_params(params, cfg)
    text = config_to_text(cfg, epoch=epoch, adam_t=state.t if state is not None else 0,
                          has_adam=int(state is not None)).encode()
    index, chunks, offset = [], [], 0
    for name, arr in _entries(params, state):
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        raw = name.encode()
        index.append(struct.pack("<I", len(raw)) + raw + _ENTRY.pack(*arr.shape, offset))
        chunks.append(data)
        offset += len(data)
    payload = b"".join(chunks)
    blob = b"".join([MAGIC, struct.pack("<I", len(text)), text,
                     struct.pack("<I", len(index)), *index, payload,
                     struct.pack("<I", zlib.crc32(payload))])
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)


class Checkpoint:
    """A fully validated checkpoint."""

    def __init__(self, cfg, params, state, epoch, extra):
        self.cfg = cfg
        self.params = params
        self.state = state
        self.epoch = epoch
        self.extra = extra


def load_checkpoint(path):
    """Read and validate a checkpoint; nothing is returned unless every check passes."""
    from .train import AdamState

    blob = Path(path).read_bytes()
    if blob[:8] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:8]!r}, expected {MAGIC!r}")
    pos = 8

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise FormatError(f"{path}: truncated at byte {pos}")
        out = blob[pos:pos + n]
        pos += n
        return out

    (text_len,) = struct.unpack("<I", take(4))
    try:
        text = take(text_len).decode()
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: config block is not UTF-8") from exc
    cfg, extra = config_from_text(text)
    (count,) = struct.unpack("<I", take(4))
    index = []
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode(errors="replace")
        *dims, offset = _ENTRY.unpack(take(_ENTRY.size))
        index.append((name, tuple(dims), offset))
    payload_start = pos
    payload_len = len(blob) - payload_start - 4
    if payload_len < 0:
        raise FormatError(f"{path}: truncated before payload")
    payload = blob[payload_start:payload_start + payload_len]
    (crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) != crc:
        raise FormatError(f"{path}: payload CRC mismatch (truncated or corrupted)")

    arrays = {}
    for name, dims, offset in index:
        nbytes = 4 * int(np.prod(dims))
        if offset + nbytes > payload_len:
            raise FormatError(f"{path}: entry {name} runs past the payload")
        arrays[name] = np.frombuffer(payload, dtype="<f4", count=nbytes // 4,
                                     offset=offset).reshape(dims).astype(np.float32)

    def group(prefix):
        out = {}
        for layer in M.param_shapes(cfg):
            try:
                k = arrays[f"{prefix}/{layer}.kernel"]
                b = arrays[f"{prefix}/{layer}.bias"].reshape(-1)
            except KeyError as exc:
                raise FormatError(f"{path}: missing entry {exc}") from exc
            out[layer] = ConvWeights(k, b)
        return out

    params = group("param")
    try:
        M.check_params(params, cfg)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    state = None
    if extra.get("has_adam") == "1":
        state = AdamState(group("adam.m"), group("adam.v"), int(extra.get("adam_t", 0)))
    return Checkpoint(cfg, params, state, int(extra.get("epoch", 0)), extra)


def expected_size(cfg: M.RdnConfig, text_len: int, with_adam: bool) -> int:
    """Byte size of a checkpoint for ``cfg`` given its config-block length."""
    groups = 3 if with_adam else 1
    names = [f"{g}/{layer}.{part}" for g in _GROUPS[:groups]
             for layer in M.param_shapes(cfg) for part in ("kernel", "bias")]
    index = sum(4 + len(n.encode()) + _ENTRY.size for n in names)
    header = len(MAGIC) + 4 + text_len + 4
    return header + index + 4 * groups * M.count_params(cfg) + 4
