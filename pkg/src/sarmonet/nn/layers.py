"""3x3 convolution, ReLU and batch normalization with exact backward passes.

The ``*_flat`` functions work on the padded-flat layout of :mod:`.grid` and are
what the network uses. ``conv2d``, ``relu`` and ``batch_norm`` (plus their
``*_backward`` twins) are ``(B, C, H, W)`` wrappers around them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ParameterError, ShapeError
from .grid import Grid

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


@dataclass
class ConvLayer:
    weight: np.ndarray  # (out_ch, in_ch, 3, 3)
    bias: np.ndarray    # (out_ch,)

    def __post_init__(self):
        if self.weight.ndim != 4 or self.weight.shape[2:] != (3, 3):
            raise ShapeError(f"conv kernels must be 3x3, got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeError("bias length must equal out_ch")

    @property
    def in_ch(self) -> int:
        return self.weight.shape[1]

    @property
    def out_ch(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def kaiming(cls, in_ch: int, out_ch: int, rng: np.random.Generator, gain: float = 2.0,
                dtype=np.float32) -> "ConvLayer":
        std = np.sqrt(gain / (in_ch * 9))
        w = rng.normal(0.0, std, size=(out_ch, in_ch, 3, 3)).astype(dtype)
        return cls(w, np.zeros(out_ch, dtype=dtype))


@dataclass
class BatchNorm:
    gain: np.ndarray
    shift: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = BN_EPS
    momentum: float = BN_MOMENTUM

    @classmethod
    def identity(cls, channels: int, dtype=np.float32) -> "BatchNorm":
        return cls(np.ones(channels, dtype), np.zeros(channels, dtype),
                   np.zeros(channels, dtype), np.ones(channels, dtype))

    @property
    def channels(self) -> int:
        return self.gain.shape[0]


# --------------------------------------------------------------------------
# padded-flat kernels


def _taps(weight: np.ndarray) -> np.ndarray:
    # (O, C, 3, 3) -> (9, C, O), tap index = dy * 3 + dx
    o, c = weight.shape[:2]
    return np.ascontiguousarray(weight.transpose(2, 3, 1, 0)).reshape(9, c, o)


def conv_forward_flat(x: np.ndarray, layer: ConvLayer, grid: Grid) -> np.ndarray:
    if x.shape[1] != layer.in_ch:
        raise ShapeError(f"conv expects {layer.in_ch} input channels, got {x.shape[1]}")
    taps = _taps(layer.weight)
    y = np.zeros((grid.n, layer.out_ch), dtype=x.dtype)
    acc = grid.band(y)
    tmp = np.empty_like(acc)
    np.matmul(grid.band(x, grid.offsets[0]), taps[0], out=acc)
    for k in range(1, 9):
        np.matmul(grid.band(x, grid.offsets[k]), taps[k], out=tmp)
        acc += tmp
    acc += layer.bias
    acc[grid.pad_rows] = 0
    return y


def conv_backward_flat(x: np.ndarray, layer: ConvLayer, dy: np.ndarray, grid: Grid,
                       need_dx: bool = True):
    """Gradients ``(dx, dweight, dbias)``; ``dy`` must be zero on pad rows."""
    taps = _taps(layer.weight)
    dyb = grid.band(dy)
    dbias = dyb.sum(axis=0)
    dtaps = np.empty_like(taps)
    for k, s in enumerate(grid.offsets):
        np.matmul(grid.band(x, s).T, dyb, out=dtaps[k])
    c, o = taps.shape[1:]
    dweight = dtaps.reshape(3, 3, c, o).transpose(3, 2, 0, 1)
    dx = None
    if need_dx:
        dx = np.zeros((grid.n, c), dtype=dy.dtype)
        acc = grid.band(dx)
        tmp = np.empty_like(acc)
        taps_t = np.ascontiguousarray(taps.transpose(0, 2, 1))
        for k, s in enumerate(grid.offsets):
            np.matmul(grid.band(dy, -s), taps_t[k], out=tmp)
            acc += tmp
        acc[grid.pad_rows] = 0
    return dx, np.ascontiguousarray(dweight), dbias


def bn_forward_flat(x: np.ndarray, bn: BatchNorm, grid: Grid, train: bool):
    """Per-channel normalization over (batch, H, W); returns ``(y, cache)``.

    In train phase the running statistics are updated in place.
    """
    if x.shape[1] != bn.channels:
        raise ShapeError(f"batch norm expects {bn.channels} channels, got {x.shape[1]}")
    mask = grid.mask.astype(x.dtype, copy=False)
    if train:
        if grid.count < 2:
            raise ParameterError("batch norm in train phase needs batch*H*W >= 2")
        mean = x.sum(axis=0) / grid.count
        xc = (x - mean) * mask
        var = np.einsum("ij,ij->j", xc, xc) / grid.count
        m = bn.momentum
        bn.running_mean[...] = m * bn.running_mean + (1 - m) * mean
        bn.running_var[...] = m * bn.running_var + (1 - m) * var * grid.count / (grid.count - 1)
    else:
        xc = (x - bn.running_mean) * mask
        var = bn.running_var
    inv_std = (1.0 / np.sqrt(var + bn.eps)).astype(x.dtype)
    xhat = xc * inv_std
    y = (xhat * bn.gain + bn.shift) * mask
    return y, (xhat, inv_std, train)


def bn_backward_flat(dy: np.ndarray, bn: BatchNorm, cache, grid: Grid):
    xhat, inv_std, train = cache
    dgain = np.einsum("ij,ij->j", dy, xhat)
    dshift = dy.sum(axis=0)
    dxhat = dy * bn.gain
    if train:
        n = grid.count
        dx = (inv_std / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * np.einsum("ij,ij->j", dxhat, xhat))
        dx *= grid.mask.astype(dx.dtype, copy=False)
    else:
        dx = dxhat * inv_std
    return dx, dgain, dshift


# --------------------------------------------------------------------------
# (B, C, H, W) wrappers


def _check4(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"expected a (B, C, H, W) tensor, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ParameterError("tensor contains NaN or Inf")
    return x


def _grid_of(x: np.ndarray) -> Grid:
    b, _, h, w = x.shape
    return Grid(b, h, w)


def conv2d(x, layer: ConvLayer) -> np.ndarray:
    x = _check4(x)
    if x.shape[1] != layer.in_ch:
        raise ShapeError(f"conv expects {layer.in_ch} input channels, got {x.shape[1]}")
    grid = _grid_of(x)
    return grid.unpack(conv_forward_flat(grid.pack(x, layer.weight.dtype), layer, grid))


def conv2d_backward(x, layer: ConvLayer, dy):
    """Exact ``(dx, dweight, dbias)`` for :func:`conv2d` at input ``x``."""
    x, dy = _check4(x), _check4(dy)
    grid = _grid_of(x)
    dt = layer.weight.dtype
    dx, dw, db = conv_backward_flat(grid.pack(x, dt), layer, grid.pack(dy, dt), grid)
    return grid.unpack(dx), dw, db


def relu(x) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x, dy) -> np.ndarray:
    return np.where(np.asarray(x) > 0, dy, 0)


def batch_norm(x, bn: BatchNorm, phase: str = "train") -> np.ndarray:
    x = _check4(x)
    grid = _grid_of(x)
    y, _ = bn_forward_flat(grid.pack(x, bn.gain.dtype), bn, grid, _is_train(phase))
    return grid.unpack(y)


def batch_norm_backward(x, bn: BatchNorm, dy, phase: str = "train"):
    """Recomputes the forward statistics (without touching running stats) and backprops."""
    x, dy = _check4(x), _check4(dy)
    grid = _grid_of(x)
    saved = bn.running_mean.copy(), bn.running_var.copy()
    _, cache = bn_forward_flat(grid.pack(x, bn.gain.dtype), bn, grid, _is_train(phase))
    bn.running_mean[...], bn.running_var[...] = saved
    dx, dgain, dshift = bn_backward_flat(grid.pack(dy, bn.gain.dtype), bn, cache, grid)
    return grid.unpack(dx), dgain, dshift


def _is_train(phase: str) -> bool:
    if phase not in ("train", "infer"):
        raise ParameterError(f"phase must be 'train' or 'infer', got {phase!r}")
    return phase == "train"
