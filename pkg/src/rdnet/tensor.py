"""Dense NCHW tensor kernels with explicit forward and backward passes.

Tensors are plain 4-D numpy arrays laid out as (batch, channels, height,
width). Storage defaults to float32; every op computes in the dtype of its
inputs, so passing float64 arrays gives the 64-bit mode used by gradient
checks. Ops never write into their arguments.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError

DTYPE = np.float32


def tensor(data, dtype=DTYPE) -> np.ndarray:
    """Build a 4-D tensor from array-like data, copying it."""
    arr = np.array(data, dtype=dtype)
    _check4(arr, "tensor")
    return arr


def zeros(n: int, c: int, h: int, w: int, dtype=DTYPE) -> np.ndarray:
    return np.zeros((n, c, h, w), dtype=dtype)


def validate(x: np.ndarray) -> np.ndarray:
    """Raise if ``x`` is not a well-formed tensor or holds NaN/Inf."""
    _check4(x, "validate")
    if not np.all(np.isfinite(x)):
        raise DimensionError("tensor contains non-finite values")
    return x


def _check4(x: np.ndarray, op: str) -> None:
    if not isinstance(x, np.ndarray) or x.ndim != 4:
        raise DimensionError(f"{op}: expected a 4-D NCHW array, got shape {np.shape(x)}")
    if min(x.shape) < 1:
        raise DimensionError(f"{op}: zero-sized dimension in shape {x.shape}")


@dataclass
class ConvWeights:
    """Kernel of shape (out_ch, in_ch, k, k) and a bias of length out_ch."""

    kernel: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        k = self.kernel
        if k.ndim != 4 or k.shape[2] != k.shape[3] or k.shape[2] not in (1, 3):
            raise DimensionError(f"kernel must be (out, in, k, k) with k in (1, 3), got {k.shape}")
        if self.bias.shape != (k.shape[0],):
            raise DimensionError(f"bias shape {self.bias.shape} does not match {k.shape[0]} outputs")

    @property
    def out_ch(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_ch(self) -> int:
        return self.kernel.shape[1]

    @property
    def ksize(self) -> int:
        return self.kernel.shape[2]

    @property
    def size(self) -> int:
        return self.kernel.size + self.bias.size

    def astype(self, dtype) -> "ConvWeights":
        return ConvWeights(self.kernel.astype(dtype), self.bias.astype(dtype))

    def copy(self) -> "ConvWeights":
        return ConvWeights(self.kernel.copy(), self.bias.copy())


def same_pad(w: ConvWeights) -> int:
    return (w.ksize - 1) // 2


def _im2col(x: np.ndarray, k: int, pad: int) -> np.ndarray:
    n, c, h, w = x.shape
    oh, ow = h + 2 * pad - k + 1, w + 2 * pad - k + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((c, k, k, n, oh, ow), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xp[:, :, i:i + oh, j:j + ow].transpose(1, 0, 2, 3)
    return cols.reshape(c * k * k, n * oh * ow)


def _col2im(cols: np.ndarray, shape, k: int, pad: int) -> np.ndarray:
    n, c, h, w = shape
    oh, ow = h + 2 * pad - k + 1, w + 2 * pad - k + 1
    cols = cols.reshape(c, k, k, n, oh, ow)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            xp[:, :, i:i + oh, j:j + ow] += cols[:, i, j].transpose(1, 0, 2, 3)
    if pad:
        xp = xp[:, :, pad:pad + h, pad:pad + w]
    return np.ascontiguousarray(xp)


def _check_conv(x: np.ndarray, w: ConvWeights, pad: int, op: str) -> None:
    _check4(x, op)
    if x.shape[1] != w.in_ch:
        raise DimensionError(f"{op}: input has {x.shape[1]} channels, kernel expects {w.in_ch}")
    if x.shape[2] + 2 * pad < w.ksize or x.shape[3] + 2 * pad < w.ksize:
        raise DimensionError(f"{op}: input {x.shape[2:]} smaller than kernel support {w.ksize}")


def conv2d_forward(x: np.ndarray, w: ConvWeights, pad: int | None = None) -> np.ndarray:
    """Stride-1 cross-correlation plus bias, via im2col and one matmul."""
    if pad is None:
        pad = same_pad(w)
    _check_conv(x, w, pad, "conv2d_forward")
    n, _, h, wd = x.shape
    k = w.ksize
    oh, ow = h + 2 * pad - k + 1, wd + 2 * pad - k + 1
    kmat = w.kernel.reshape(w.out_ch, -1)
    if k == 1:
        cols = x.transpose(1, 0, 2, 3).reshape(x.shape[1], -1)
    else:
        cols = _im2col(x, k, pad)
    out = kmat @ cols
    out = out.reshape(w.out_ch, n, oh, ow).transpose(1, 0, 2, 3)
    return np.ascontiguousarray(out + w.bias.reshape(1, -1, 1, 1))


def conv2d_backward(x: np.ndarray, w: ConvWeights, grad_out: np.ndarray,
                    pad: int | None = None) -> tuple[np.ndarray, ConvWeights]:
    """Return (dL/dx, dL/dw) for a conv2d_forward call with the same arguments."""
    if pad is None:
        pad = same_pad(w)
    _check_conv(x, w, pad, "conv2d_backward")
    n, c, h, wd = x.shape
    k = w.ksize
    expected = (n, w.out_ch, h + 2 * pad - k + 1, wd + 2 * pad - k + 1)
    if grad_out.shape != expected:
        raise DimensionError(f"conv2d_backward: grad_out {grad_out.shape} != output {expected}")
    g = grad_out.transpose(1, 0, 2, 3).reshape(w.out_ch, -1)
    kmat = w.kernel.reshape(w.out_ch, -1)
    if k == 1:
        cols = x.transpose(1, 0, 2, 3).reshape(c, -1)
    else:
        cols = _im2col(x, k, pad)
    grad_kernel = (g @ cols.T).reshape(w.kernel.shape)
    grad_bias = g.sum(axis=1)
    dcols = kmat.T @ g
    if k == 1:
        grad_x = np.ascontiguousarray(dcols.reshape(c, n, h, wd).transpose(1, 0, 2, 3))
    else:
        grad_x = _col2im(dcols, x.shape, k, pad)
    return grad_x, ConvWeights(grad_kernel, grad_bias)


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    if x.shape != grad_out.shape:
        raise DimensionError(f"relu_backward: {x.shape} vs {grad_out.shape}")
    return np.where(x > 0, grad_out, 0).astype(grad_out.dtype, copy=False)


def concat_channels(parts: list[np.ndarray]) -> np.ndarray:
    if not parts:
        raise DimensionError("concat_channels: empty list")
    for p in parts:
        _check4(p, "concat_channels")
    n, _, h, w = parts[0].shape
    for p in parts[1:]:
        if (p.shape[0], p.shape[2], p.shape[3]) != (n, h, w):
            raise DimensionError(f"concat_channels: {p.shape} does not match {parts[0].shape}")
    return np.concatenate(parts, axis=1)


def split_channels_backward(grad_out: np.ndarray, sizes: list[int]) -> list[np.ndarray]:
    """Slice a concatenated gradient back into per-part gradients."""
    if sum(sizes) != grad_out.shape[1]:
        raise DimensionError(f"split sizes {sizes} do not sum to {grad_out.shape[1]} channels")
    bounds = np.cumsum([0] + list(sizes))
    return [grad_out[:, a:b].copy() for a, b in zip(bounds[:-1], bounds[1:])]


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise DimensionError(f"add: {a.shape} vs {b.shape}")
    return a + b


def pixel_shuffle(x: np.ndarray, r: int) -> np.ndarray:
    """Rearrange (n, c*r*r, h, w) into (n, c, h*r, w*r), ESPCN ordering."""
    _check4(x, "pixel_shuffle")
    n, c, h, w = x.shape
    if c % (r * r):
        raise DimensionError(f"pixel_shuffle: {c} channels not divisible by r^2={r * r}")
    out = x.reshape(n, c // (r * r), r, r, h, w).transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(out.reshape(n, c // (r * r), h * r, w * r))


def pixel_unshuffle_backward(grad_out: np.ndarray, r: int) -> np.ndarray:
    """Inverse permutation of pixel_shuffle; also its backward pass."""
    _check4(grad_out, "pixel_unshuffle_backward")
    n, c, hr, wr = grad_out.shape
    if hr % r or wr % r:
        raise DimensionError(f"pixel_unshuffle_backward: {hr}x{wr} not divisible by {r}")
    h, w = hr // r, wr // r
    out = grad_out.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4)
    return np.ascontiguousarray(out.reshape(n, c * r * r, h, w))


# The 8 elements of the dihedral group acting on the last two axes, encoded as
# (number of 90-degree rotations, flip first). Index 0 is the identity.
DIHEDRAL = tuple((k, f) for f in (False, True) for k in range(4))


def dihedral(x: np.ndarray, index: int) -> np.ndarray:
    k, flip = DIHEDRAL[index]
    if flip:
        x = x[..., ::-1]
    return np.ascontiguousarray(np.rot90(x, k, axes=(-2, -1)))


def dihedral_inverse(x: np.ndarray, index: int) -> np.ndarray:
    k, flip = DIHEDRAL[index]
    x = np.rot90(x, -k, axes=(-2, -1))
    if flip:
        x = x[..., ::-1]
    return np.ascontiguousarray(x)
