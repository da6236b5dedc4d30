"""MONW weight files.

Layout (little endian)::

    b"MONW" | version u32 | record count u32
    record := kind u8 | ndims u8 | dims u32[ndims] | float32 payload

Kind 1 is a convolution, dims ``(out_ch, in_ch, 3, 3)``, payload weights then
bias. Kind 2 is a batch norm, dims ``(channels,)``, payload gain, shift,
running mean, running variance. Records follow layer order: ``conv1, conv2,
bn2, ..., conv16, bn16, conv17``.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError, IngestionError
from ..fileio import atomic_write_bytes
from .layers import BatchNorm, ConvLayer
from .model import MonetModel, skip_layers

MONW_MAGIC = b"MONW"
MONW_VERSION = 1
KIND_CONV = 1
KIND_BN = 2


def _f32(a) -> bytes:
    return np.asarray(a, dtype="<f4").tobytes()


def encode_monw(model: MonetModel) -> bytes:
    records = []
    for k, conv in enumerate(model.convs, start=1):
        dims = conv.weight.shape
        records.append(struct.pack("<BB4I", KIND_CONV, 4, *dims) + _f32(conv.weight) + _f32(conv.bias))
        if k in model.bns:
            bn = model.bns[k]
            records.append(struct.pack("<BBI", KIND_BN, 1, bn.channels) + _f32(bn.gain) + _f32(bn.shift)
                           + _f32(bn.running_mean) + _f32(bn.running_var))
    header = MONW_MAGIC + struct.pack("<II", MONW_VERSION, len(records))
    return header + b"".join(records)


def decode_monw(data: bytes, name: str = "<bytes>", dtype=np.float32) -> MonetModel:
    if data[:4] != MONW_MAGIC:
        raise FormatError(f"{name}: bad magic {data[:4]!r}, expected {MONW_MAGIC!r}")
    try:
        version, count = struct.unpack_from("<II", data, 4)
    except struct.error as exc:
        raise FormatError(f"{name}: truncated MONW header") from exc
    if version != MONW_VERSION:
        raise FormatError(f"{name}: unsupported MONW version {version}")
    pos = 12
    convs, bns = [], {}

    def take(n):
        nonlocal pos
        chunk = data[pos:pos + 4 * n]
        if len(chunk) != 4 * n:
            raise FormatError(f"{name}: truncated MONW payload")
        pos += 4 * n
        return np.frombuffer(chunk, dtype="<f4").astype(dtype)

    try:
        for _ in range(count):
            kind, ndims = struct.unpack_from("<BB", data, pos)
            dims = struct.unpack_from(f"<{ndims}I", data, pos + 2)
            pos += 2 + 4 * ndims
            if kind == KIND_CONV:
                w = take(int(np.prod(dims))).reshape(dims)
                convs.append(ConvLayer(w, take(dims[0])))
            elif kind == KIND_BN:
                c = dims[0]
                bns[len(convs)] = BatchNorm(take(c), take(c), take(c), take(c))
            else:
                raise FormatError(f"{name}: unknown record kind {kind}")
    except struct.error as exc:
        raise FormatError(f"{name}: truncated MONW record") from exc
    if pos != len(data):
        raise FormatError(f"{name}: {len(data) - pos} trailing bytes")
    if not convs:
        raise FormatError(f"{name}: no layers")

    model = MonetModel.__new__(MonetModel)
    model.depth = len(convs)
    model.width = convs[0].out_ch
    model.in_ch = convs[0].in_ch
    model.dtype = np.dtype(dtype)
    model.convs, model.bns = convs, bns
    model.skips = skip_layers(model.depth)
    model.version = 0
    if sorted(bns) != list(range(2, model.depth)):
        raise FormatError(f"{name}: batch-norm records do not match depth {model.depth}")
    return model


def save_weights(path, model: MonetModel) -> None:
    atomic_write_bytes(path, encode_monw(model))


def load_weights(path, dtype=np.float32) -> MonetModel:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IngestionError(f"{path}: {exc}") from exc
    return decode_monw(data, str(path), dtype)
