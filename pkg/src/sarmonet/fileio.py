"""On-disk formats: SARF raw-float rasters, PGM/PNG grayscale, dataset manifests.

SARF layout (little endian)::

    b"SARF" | version u32 | height u32 | width u32 | float32[height * width] row-major
"""

from __future__ import annotations

import csv
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError, IngestionError

SARF_MAGIC = b"SARF"
SARF_VERSION = 1
_SARF_HEADER = struct.Struct("<4sIII")

IMAGE_SUFFIXES = (".pgm", ".png", ".sarf")
LUMA = np.array([0.299, 0.587, 0.114])


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_sarf(image) -> bytes:
    a = np.asarray(image)
    if a.ndim != 2:
        raise ValueError("SARF holds 2-D rasters only")
    h, w = a.shape
    return _SARF_HEADER.pack(SARF_MAGIC, SARF_VERSION, h, w) + a.astype("<f4").tobytes()


def decode_sarf(data: bytes, name: str = "<bytes>") -> np.ndarray:
    if len(data) < _SARF_HEADER.size:
        raise FormatError(f"{name}: truncated SARF header")
    magic, version, h, w = _SARF_HEADER.unpack_from(data)
    if magic != SARF_MAGIC:
        raise FormatError(f"{name}: bad magic {magic!r}, expected {SARF_MAGIC!r}")
    if version != SARF_VERSION:
        raise FormatError(f"{name}: unsupported SARF version {version}")
    payload = data[_SARF_HEADER.size:]
    if len(payload) != 4 * h * w:
        raise FormatError(f"{name}: payload is {len(payload)} bytes, expected {4 * h * w}")
    return np.frombuffer(payload, dtype="<f4").reshape(h, w).astype(np.float32)


def write_sarf(path, image) -> None:
    atomic_write_bytes(path, encode_sarf(image))


def read_sarf(path) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IngestionError(f"{path}: {exc}") from exc
    return decode_sarf(data, os.fspath(path))


# --------------------------------------------------------------------------
# PGM / PNG


def _pgm_tokens(data: bytes, count: int, pos: int):
    tokens = []
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos


def decode_pgm(data: bytes, name: str = "<bytes>") -> np.ndarray:
    """Decode binary (P5) or ASCII (P2) PGM to floats in [0, 1]."""
    magic = data[:2]
    if magic not in (b"P5", b"P2"):
        raise FormatError(f"{name}: not a PGM file")
    try:
        (w, h, maxval), pos = _pgm_tokens(data, 3, 2)
        w, h, maxval = int(w), int(h), int(maxval)
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{name}: bad PGM header") from exc
    if not 0 < maxval < 65536:
        raise FormatError(f"{name}: bad PGM maxval {maxval}")
    if magic == b"P5":
        dtype = ">u2" if maxval > 255 else "u1"
        nbytes = h * w * np.dtype(dtype).itemsize
        raw = data[pos + 1:pos + 1 + nbytes]
        if len(raw) != nbytes:
            raise FormatError(f"{name}: truncated PGM payload")
        arr = np.frombuffer(raw, dtype=dtype).reshape(h, w)
    else:
        try:
            vals, _ = _pgm_tokens(data, h * w, pos)
        except FormatError as exc:
            raise FormatError(f"{name}: truncated PGM payload") from exc
        arr = np.array([int(v) for v in vals]).reshape(h, w)
    return arr.astype(np.float64) / maxval


def encode_pgm(image, maxval: int = 255) -> bytes:
    """Encode a [0, 1] image as binary PGM (values clipped)."""
    a = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    h, w = a.shape
    dtype = ">u2" if maxval > 255 else "u1"
    q = np.round(a * maxval).astype(dtype)
    return f"P5\n{w} {h}\n{maxval}\n".encode() + q.tobytes()


def encode_pbm(mask) -> bytes:
    """1-bit binary PBM (P4); set pixels are black (1)."""
    m = np.asarray(mask, dtype=bool)
    h, w = m.shape
    return f"P4\n{w} {h}\n".encode() + np.packbits(m, axis=1).tobytes()


def decode_pbm(data: bytes) -> np.ndarray:
    if data[:2] != b"P4":
        raise FormatError("not a binary PBM file")
    (w, h), pos = _pgm_tokens(data, 2, 2)
    w, h = int(w), int(h)
    row_bytes = (w + 7) // 8
    raw = np.frombuffer(data[pos + 1:pos + 1 + h * row_bytes], dtype=np.uint8).reshape(h, row_bytes)
    return np.unpackbits(raw, axis=1)[:, :w].astype(bool)


def to_gray(arr: np.ndarray) -> np.ndarray:
    if arr.ndim == 3:
        if arr.shape[2] == 4:
            arr = arr[..., :3]
        if arr.shape[2] == 3:
            return arr @ LUMA
        if arr.shape[2] == 1:
            return arr[..., 0]
    if arr.ndim != 2:
        raise FormatError(f"unsupported image shape {arr.shape}")
    return arr


def read_png(path) -> np.ndarray:
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover - optional dependency
        raise IngestionError(f"{path}: PNG support needs Pillow") from exc
    try:
        with Image.open(path) as im:
            mode = im.mode
            arr = np.asarray(im)
    except Exception as exc:
        raise IngestionError(f"{path}: cannot decode PNG ({exc})") from exc
    scale = 65535.0 if mode.startswith("I;16") or arr.dtype == np.uint16 else 255.0
    return to_gray(arr.astype(np.float64) / scale)


def write_png(path, image) -> None:
    from PIL import Image

    q = np.round(np.clip(np.asarray(image, dtype=np.float64), 0, 1) * 255).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(q, mode="L").save(path)


def read_image(path) -> np.ndarray:
    """Read a grayscale amplitude raster (SARF, PGM or PNG); RGB is converted with luma weights."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise IngestionError(f"{path}: {exc}") from exc
    name = os.fspath(path)
    if data[:4] == SARF_MAGIC:
        return decode_sarf(data, name).astype(np.float64)
    if data[:2] in (b"P5", b"P2"):
        return decode_pgm(data, name)
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        return read_png(path)
    raise FormatError(f"{name}: unrecognized image format")


def quicklook(image, clip_percentile: float = 99.5) -> np.ndarray:
    """Scale amplitudes to [0, 1] for display, clipping at a high percentile."""
    a = np.asarray(image, dtype=np.float64)
    top = np.percentile(a, clip_percentile)
    if top <= 0:
        return np.zeros_like(a)
    return np.clip(a / top, 0.0, 1.0)


def write_quicklook(path, image, clip_percentile: float = 99.5) -> None:
    ql = quicklook(image, clip_percentile)
    if str(path).lower().endswith(".png"):
        write_png(path, ql)
    else:
        atomic_write_bytes(path, encode_pgm(ql))


# --------------------------------------------------------------------------
# dataset persistence

MANIFEST_FIELDS = ("id", "split", "source", "row", "col", "seed")


def save_dataset(out_dir, train, val) -> Path:
    """Write ``patches/<id>_{noisy,clean}.sarf`` plus ``manifest.csv``; returns the manifest path."""
    out_dir = Path(out_dir)
    patch_dir = out_dir / "patches"
    patch_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for ps in (train, val):
        for rec, y, x in zip(ps.records, ps.noisy, ps.clean):
            write_sarf(patch_dir / f"{rec.id:06d}_noisy.sarf", y)
            write_sarf(patch_dir / f"{rec.id:06d}_clean.sarf", x)
            rows.append(rec)
    rows.sort(key=lambda r: r.id)
    manifest = out_dir / "manifest.csv"
    with open(manifest, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(MANIFEST_FIELDS)
        for r in rows:
            wr.writerow([r.id, r.split, r.source, r.row, r.col, r.seed])
    return manifest


def load_dataset(dataset_dir):
    """Inverse of :func:`save_dataset`; returns ``(train, val)`` PatchSets."""
    from .speckle import PatchRecord, PatchSet

    dataset_dir = Path(dataset_dir)
    manifest = dataset_dir / "manifest.csv"
    if not manifest.exists():
        raise IngestionError(f"{manifest}: missing dataset manifest")
    groups = {"train": ([], [], []), "val": ([], [], [])}
    with open(manifest, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rec = PatchRecord(int(row["id"]), row["split"], row["source"], int(row["row"]),
                              int(row["col"]), int(row["seed"]))
            ys, xs, recs = groups[rec.split]
            ys.append(read_sarf(dataset_dir / "patches" / f"{rec.id:06d}_noisy.sarf"))
            xs.append(read_sarf(dataset_dir / "patches" / f"{rec.id:06d}_clean.sarf"))
            recs.append(rec)

    def to_set(ys, xs, recs):
        if not ys:
            return PatchSet(np.zeros((0, 0, 0), np.float32), np.zeros((0, 0, 0), np.float32), [])
        return PatchSet(np.stack(ys), np.stack(xs), recs)

    return to_set(*groups["train"]), to_set(*groups["val"])
