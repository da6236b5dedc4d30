"""The MONet despeckling network.

Layer recurrence (``D`` layers, ``z_0 = Y``)::

    z_1 = relu(conv_1(Y))
    z_k = BN_k(relu(conv_k(z_{k-1}))) + [ (k-1) % 3 == 0 ] * z_{k-3}     1 < k < D
    z_D = conv_D(z_{D-1})

so with ``D = 17`` the additive skips land on layers 4, 7, 10, 13 and 16.
Note the batch norm sits *after* the ReLU.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError, UsageError
from .grid import Grid
from .layers import (BatchNorm, ConvLayer, bn_backward_flat, bn_forward_flat, conv_backward_flat,
                     conv_forward_flat)

DEPTH = 17
WIDTH = 64
# small output-layer gain: the summed skips make a unit-gain output start
# several times larger than the [0, 1] targets
OUT_GAIN = 0.01


def skip_layers(depth: int = DEPTH) -> tuple[int, ...]:
    return tuple(k for k in range(2, depth) if (k - 1) % 3 == 0)


class MonetModel:
    """Ordered parameter set of the network plus BN running statistics.

    ``convs[k - 1]`` is layer ``k``; ``bns[k]`` exists for ``1 < k < depth``.
    """

    def __init__(self, width: int = WIDTH, depth: int = DEPTH, seed=0, dtype=np.float32,
                 in_ch: int = 1):
        if depth < 2:
            raise ValueError("depth must be >= 2")
        self.width, self.depth, self.dtype = width, depth, np.dtype(dtype)
        self.in_ch = in_ch
        rng = np.random.default_rng(seed)
        self.convs: list[ConvLayer] = []
        for k in range(1, depth + 1):
            cin = in_ch if k == 1 else width
            cout = 1 if k == depth else width
            self.convs.append(ConvLayer.kaiming(cin, cout, rng, gain=OUT_GAIN if k == depth else 2.0,
                                                dtype=self.dtype))
        self.bns: dict[int, BatchNorm] = {k: BatchNorm.identity(width, self.dtype)
                                          for k in range(2, depth)}
        self.skips = skip_layers(depth)
        self.version = 0

    # ---- parameter access

    def params(self) -> dict[str, np.ndarray]:
        """Trainable arrays by name (views into the model, safe to update in place)."""
        out = {}
        for k, conv in enumerate(self.convs, start=1):
            out[f"conv{k}.weight"] = conv.weight
            out[f"conv{k}.bias"] = conv.bias
            if k in self.bns:
                out[f"bn{k}.gain"] = self.bns[k].gain
                out[f"bn{k}.shift"] = self.bns[k].shift
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for k, bn in self.bns.items():
            out[f"bn{k}.running_mean"] = bn.running_mean
            out[f"bn{k}.running_var"] = bn.running_var
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {**self.params(), **self.buffers()}

    def bump(self) -> None:
        """Mark parameters as changed; outstanding forward caches become stale."""
        self.version += 1

    def copy(self) -> "MonetModel":
        other = MonetModel.__new__(MonetModel)
        other.width, other.depth, other.dtype, other.in_ch = self.width, self.depth, self.dtype, self.in_ch
        other.convs = [ConvLayer(c.weight.copy(), c.bias.copy()) for c in self.convs]
        other.bns = {k: BatchNorm(b.gain.copy(), b.shift.copy(), b.running_mean.copy(),
                                  b.running_var.copy(), b.eps, b.momentum) for k, b in self.bns.items()}
        other.skips = self.skips
        other.version = 0
        return other

    def astype(self, dtype) -> "MonetModel":
        other = self.copy()
        other.dtype = np.dtype(dtype)
        for c in other.convs:
            c.weight, c.bias = c.weight.astype(dtype), c.bias.astype(dtype)
        for b in other.bns.values():
            b.gain, b.shift = b.gain.astype(dtype), b.shift.astype(dtype)
            b.running_mean, b.running_var = b.running_mean.astype(dtype), b.running_var.astype(dtype)
        return other

    # ---- forward / backward

    def forward(self, y, phase: str = "train"):
        return monet_forward(self, y, phase)

    def backward(self, cache, grad_out, input_grad: bool = False):
        return monet_backward(self, cache, grad_out, input_grad)

    def __call__(self, y, phase: str = "infer") -> np.ndarray:
        return monet_forward(self, y, phase)[0]


@dataclass
class ForwardCache:
    grid: Grid
    version: int
    model_id: int
    train: bool
    inputs: list = field(default_factory=list)    # z_{k-1} fed to conv k
    active: list = field(default_factory=list)    # relu masks (None for the last layer)
    bn: dict = field(default_factory=dict)
    used: bool = False


def param_count(model: MonetModel) -> int:
    return int(sum(a.size for a in model.params().values()))


def monet_forward(model: MonetModel, y, phase: str = "train"):
    """Run the network on ``y`` of shape ``(B, 1, H, W)``; returns ``(xhat, cache)``."""
    y = np.asarray(y)
    if y.ndim != 4 or y.shape[1] != model.in_ch:
        raise ShapeError(f"input must be (B, {model.in_ch}, H, W), got {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ValueError("input contains NaN or Inf")
    if phase not in ("train", "infer"):
        raise ValueError(f"phase must be 'train' or 'infer', got {phase!r}")
    train = phase == "train"
    b, _, h, w = y.shape
    grid = Grid(b, h, w)
    cache = ForwardCache(grid, model.version, id(model), train)

    z = grid.pack(y, model.dtype)
    outputs = {0: z}
    D = model.depth
    for k, conv in enumerate(model.convs, start=1):
        cache.inputs.append(z)
        a = conv_forward_flat(z, conv, grid)
        if k == D:
            cache.active.append(None)
            z = a
            break
        act = a > 0
        cache.active.append(act)
        z = np.multiply(a, act, out=a)
        if k > 1:
            z, cache.bn[k] = bn_forward_flat(z, model.bns[k], grid, train)
            if k in model.skips:
                z = z + outputs[k - 3]
        outputs[k] = z
    return grid.unpack(z), cache


def monet_backward(model: MonetModel, cache: ForwardCache, grad_out, input_grad: bool = False):
    """Parameter gradients (same keys as ``model.params()``) for upstream ``dL/dxhat``.

    With ``input_grad=True`` returns ``(grads, dL/dY)``.
    """
    if cache.model_id != id(model) or cache.version != model.version:
        raise UsageError("forward cache is stale: the model changed since the forward pass")
    if cache.used:
        raise UsageError("forward cache was already consumed by a backward pass")
    cache.used = True
    grid = cache.grid
    D = model.depth
    dz = {D: grid.pack(np.asarray(grad_out), model.dtype)}
    grads: dict[str, np.ndarray] = {}
    for k in range(D, 0, -1):
        g = dz.pop(k)
        if k == D:
            da = g
        else:
            if k in model.skips:
                dz[k - 3] = dz[k - 3] + g if (k - 3) in dz else g
            if k > 1:
                g, dgain, dshift = bn_backward_flat(g, model.bns[k], cache.bn[k], grid)
                grads[f"bn{k}.gain"], grads[f"bn{k}.shift"] = dgain, dshift
            da = g * cache.active[k - 1]
        need_dx = k > 1 or input_grad
        dx, dw, db = conv_backward_flat(cache.inputs[k - 1], model.convs[k - 1], da, grid, need_dx)
        grads[f"conv{k}.weight"], grads[f"conv{k}.bias"] = dw, db
        if need_dx:
            dz[k - 1] = dz[k - 1] + dx if (k - 1) in dz else dx
    ordered = {name: grads[name] for name in model.params()}
    if input_grad:
        return ordered, grid.unpack(dz[0])
    return ordered


def predict(model: MonetModel, image, max_pixels: int = 1 << 20, overlap: int = 16) -> np.ndarray:
    """Despeckle a 2-D amplitude image in inference phase.

    Runs whole-image when ``H * W <= max_pixels``; otherwise tiles with
    ``overlap`` pixels of context on each side and keeps tile centres.
    """
    img = np.asarray(image)
    if img.ndim != 2:
        raise ShapeError("predict expects a 2-D image")
    h, w = img.shape
    if h * w <= max_pixels:
        return monet_forward(model, img[None, None], "infer")[0][0, 0]
    tile = max(int(np.sqrt(max_pixels)) - 2 * overlap, 16)
    out = np.empty((h, w), dtype=model.dtype)
    for r0 in range(0, h, tile):
        for c0 in range(0, w, tile):
            r1, c1 = min(r0 + tile, h), min(c0 + tile, w)
            R0, C0 = max(r0 - overlap, 0), max(c0 - overlap, 0)
            R1, C1 = min(r1 + overlap, h), min(c1 + overlap, w)
            res = monet_forward(model, img[None, None, R0:R1, C0:C1], "infer")[0][0, 0]
            out[r0:r1, c0:c1] = res[r0 - R0:r1 - R0, c0 - C0:c1 - C0]
    return out
