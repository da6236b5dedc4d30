"""Speckle simulation, synthetic clean scenes and patch datasets.

Images are plain 2-D float arrays holding amplitudes; clean references are
normalized to [0, 1]. Noisy images follow the multiplicative model
``Y = X * N`` with ``N`` fully developed amplitude speckle.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DomainError, IngestionError, ParameterError

TEXTURE_KINDS = ("constant", "ramp", "checkerboard", "gamma-texture", "point-scatterers", "mosaic")
_KIND_ALIASES = {"gradient": "ramp"}


def derive_seed(master_seed: int, *index: int) -> int:
    """Stable 64-bit child seed for ``(master_seed, *index)``."""
    ss = np.random.SeedSequence([int(master_seed), *map(int, index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def as_amplitude(x, name: str = "image") -> np.ndarray:
    """Validate a 2-D nonnegative amplitude raster."""
    x = np.asarray(x)
    if x.ndim != 2 or x.size == 0:
        raise ParameterError(f"{name} must be a non-empty 2-D array, got shape {x.shape}")
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise DomainError(f"{name} must be finite and nonnegative")
    return x


@dataclass
class SpeckleField:
    values: np.ndarray
    looks: int


@dataclass
class SimPair:
    clean: np.ndarray
    noisy: np.ndarray
    speckle: SpeckleField
    seed: int


def sample_speckle(height: int, width: int, looks: int = 1, seed=None,
                   dtype=np.float64) -> SpeckleField:
    """Fully developed amplitude speckle: ``N = sqrt(G)``, ``G ~ Gamma(L, rate=L)``."""
    if height < 1 or width < 1:
        raise ParameterError(f"invalid speckle dimensions {height}x{width}")
    if looks < 1 or int(looks) != looks:
        raise ParameterError(f"looks must be a positive integer, got {looks!r}")
    rng = np.random.default_rng(seed)
    g = rng.gamma(float(looks), 1.0 / looks, size=(height, width))
    return SpeckleField(np.sqrt(g).astype(dtype, copy=False), int(looks))


def simulate_pair(clean, looks: int = 1, seed=None) -> SimPair:
    clean = np.asarray(clean)
    if clean.ndim != 2:
        raise ParameterError("clean image must be 2-D")
    if np.any(clean < 0):
        raise DomainError("clean image contains negative amplitudes")
    clean = as_amplitude(clean, "clean")
    if clean.max() > 1.0:
        raise DomainError("clean image must be normalized to [0, 1]")
    sp = sample_speckle(*clean.shape, looks=looks, seed=seed, dtype=clean.dtype)
    return SimPair(clean=clean, noisy=clean * sp.values, speckle=sp,
                   seed=0 if seed is None else int(seed))


# --------------------------------------------------------------------------
# synthetic scenes

_DEFAULTS = {
    "constant": {"c": 0.5},
    "ramp": {"lo": 0.05, "hi": 0.95},
    "checkerboard": {"lo": 0.2, "hi": 0.8, "cell": 8},
    "gamma-texture": {"mean": 0.4, "shape": 4.0, "corr": 2.0},
    "point-scatterers": {"background": 0.15, "k": 5.0, "density": 1e-3},
    "mosaic": {"n_rects": 12, "lo": 0.05, "hi": 0.9},
}


def canonical_kind(kind: str) -> str:
    kind = _KIND_ALIASES.get(kind, kind)
    if kind not in TEXTURE_KINDS:
        raise ParameterError(f"unknown texture kind {kind!r}; expected one of {TEXTURE_KINDS}")
    return kind


def synth_texture(kind: str, height: int, width: int, params: dict | None = None,
                  seed=None) -> np.ndarray:
    """Clean reference raster in [0, 1] of the requested kind.

    Kinds and their parameters (defaults in ``_DEFAULTS``):

    * ``constant``: ``c``
    * ``ramp``: linear from ``lo`` (first column) to ``hi`` (last column)
    * ``checkerboard``: squares of side ``cell`` alternating ``lo``/``hi``
    * ``gamma-texture``: ``mean * G`` with ``G`` unit-mean Gamma(``shape``) noise
      smoothed by a Gaussian of width ``corr``; clipped to [0, 1]
    * ``point-scatterers``: ``background`` level with isolated pixels at
      ``k * background``, each pixel planted with probability ``density``
    * ``mosaic``: overlapping random rectangles on a random ramp with texture
    """
    kind = canonical_kind(kind)
    if height < 1 or width < 1:
        raise ParameterError(f"invalid texture size {height}x{width}")
    p = {**_DEFAULTS[kind], **(params or {})}
    rng = np.random.default_rng(seed)
    if kind == "constant":
        img = np.full((height, width), float(p["c"]))
    elif kind == "ramp":
        row = np.linspace(p["lo"], p["hi"], width)
        img = np.broadcast_to(row, (height, width)).copy()
    elif kind == "checkerboard":
        cell = int(p["cell"])
        ii, jj = np.indices((height, width))
        img = np.where(((ii // cell) + (jj // cell)) % 2 == 0, p["lo"], p["hi"]).astype(float)
    elif kind == "gamma-texture":
        img = p["mean"] * _gamma_field(rng, height, width, p["shape"], p["corr"])
    elif kind == "point-scatterers":
        img, _ = point_scatterer_scene(height, width, p["background"], p["k"], p["density"], rng)
    else:
        img = _mosaic(rng, height, width, int(p["n_rects"]), p["lo"], p["hi"])
    return np.clip(img, 0.0, 1.0)


def _gamma_field(rng, height, width, shape, corr):
    g = rng.gamma(shape, 1.0 / shape, size=(height, width))
    if corr > 0:
        g = ndimage.gaussian_filter(g, corr, mode="wrap")
    return g


def point_scatterer_scene(height: int, width: int, background: float = 0.15, k: float = 5.0,
                          density: float = 1e-3, seed=None):
    """Constant background with isolated bright pixels; returns ``(image, mask)``.

    Candidates are Bernoulli(``density``) per pixel; a candidate with another
    candidate in its 8-neighbourhood is dropped so targets stay isolated.
    """
    if k * background > 1.0:
        raise ParameterError("k * background must not exceed 1")
    rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    cand = rng.random((height, width)) < density
    neighbours = ndimage.convolve(cand.astype(np.int32), np.ones((3, 3), np.int32),
                                  mode="constant") - cand
    mask = cand & (neighbours == 0)
    img = np.full((height, width), float(background))
    img[mask] = k * background
    return img, mask


def _mosaic(rng, height, width, n_rects, lo, hi):
    a, b = rng.uniform(lo, hi, size=2)
    if rng.random() < 0.5:
        img = np.broadcast_to(np.linspace(a, b, width), (height, width)).copy()
    else:
        img = np.broadcast_to(np.linspace(a, b, height)[:, None], (height, width)).copy()
    for _ in range(n_rects):
        h = rng.integers(max(2, height // 16), max(3, height // 2))
        w = rng.integers(max(2, width // 16), max(3, width // 2))
        r0 = rng.integers(0, height - h + 1)
        c0 = rng.integers(0, width - w + 1)
        img[r0:r0 + h, c0:c0 + w] = rng.uniform(lo, hi)
    tex = _gamma_field(rng, height, width, 8.0, 1.5)
    return img * tex


def random_params(kind: str, rng: np.random.Generator) -> dict:
    """Randomized parameters used when a recipe generates many source images."""
    kind = canonical_kind(kind)
    if kind == "constant":
        return {"c": float(rng.uniform(0.05, 0.95))}
    if kind == "ramp":
        lo, hi = np.sort(rng.uniform(0.05, 0.95, size=2))
        return {"lo": float(lo), "hi": float(hi)}
    if kind == "checkerboard":
        lo, hi = np.sort(rng.uniform(0.05, 0.95, size=2))
        return {"lo": float(lo), "hi": float(hi), "cell": int(rng.choice([4, 8, 16]))}
    if kind == "gamma-texture":
        return {"mean": float(rng.uniform(0.15, 0.45)), "shape": float(rng.uniform(4.0, 16.0)),
                "corr": float(rng.uniform(1.0, 3.0))}
    if kind == "point-scatterers":
        return dict(_DEFAULTS[kind])
    return {"n_rects": int(rng.integers(6, 20)), "lo": 0.05, "hi": 0.9}


def analytic_mean(kind: str, params: dict) -> float:
    """Expected pixel mean of an (unclipped) synthetic texture."""
    kind = canonical_kind(kind)
    p = {**_DEFAULTS[kind], **params}
    if kind == "constant":
        return p["c"]
    if kind in ("ramp", "checkerboard"):
        return 0.5 * (p["lo"] + p["hi"])
    if kind == "gamma-texture":
        return p["mean"]
    if kind == "point-scatterers":
        return p["background"] * (1 + (p["k"] - 1) * p["density"])
    raise ParameterError(f"no analytic mean for {kind!r}")


# --------------------------------------------------------------------------
# datasets

SYNTHETIC_PREFIX = "synthetic:"


@dataclass
class DatasetSpec:
    """What to extract: ``source`` is a directory of images or ``synthetic:<kind>+<kind>...``."""

    source: str = "synthetic:constant+ramp+checkerboard+gamma-texture+mosaic"
    patch_size: int = 64
    stride: int | None = None
    looks: int = 1
    train_frac: float = 0.8
    val_frac: float = 0.2
    seed: int = 0
    n_images: int = 16
    image_size: int = 256
    max_patches: int | None = None

    def __post_init__(self):
        if self.stride is None:
            self.stride = self.patch_size
        if self.patch_size < 1 or self.stride < 1:
            raise ParameterError("patch_size and stride must be positive")
        if self.train_frac < 0 or self.val_frac < 0 or abs(self.train_frac + self.val_frac - 1) > 1e-9:
            raise ParameterError("split fractions must be nonnegative and sum to 1")
        if self.looks < 1:
            raise ParameterError("looks must be >= 1")


@dataclass
class PatchRecord:
    id: int
    split: str
    source: str
    row: int
    col: int
    seed: int


@dataclass
class PatchSet:
    noisy: np.ndarray  # (n, p, p) float32
    clean: np.ndarray
    records: list[PatchRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return self.noisy.shape[0]


@dataclass
class Source:
    name: str
    image: np.ndarray
    kind: str | None = None
    params: dict | None = None


def synthetic_sources(recipe: str, n_images: int, size: int, seed: int) -> list[Source]:
    """Images cycling through the ``+``-separated kinds of ``recipe`` with seeded random params."""
    kinds = [canonical_kind(k.strip()) for k in recipe.split("+") if k.strip()]
    if not kinds:
        raise ParameterError(f"empty synthetic recipe {recipe!r}")
    out = []
    for i in range(n_images):
        kind = kinds[i % len(kinds)]
        rng = np.random.default_rng(derive_seed(seed, 1, i))
        params = random_params(kind, rng)
        img = synth_texture(kind, size, size, params, seed=rng)
        out.append(Source(f"{SYNTHETIC_PREFIX}{kind}#{i}", img, kind, params))
    return out


def load_sources(spec: DatasetSpec) -> list[Source]:
    from .fileio import IMAGE_SUFFIXES, read_image

    if spec.source.startswith(SYNTHETIC_PREFIX):
        return synthetic_sources(spec.source[len(SYNTHETIC_PREFIX):], spec.n_images,
                                 spec.image_size, spec.seed)
    root = Path(spec.source)
    if not root.is_dir():
        raise IngestionError(f"dataset source {spec.source!r} is not a directory")
    files = sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise IngestionError(f"no images found in {spec.source!r}")
    return [Source(os.fspath(f), read_image(f)) for f in files]


def extract_patches(image: np.ndarray, patch: int, stride: int):
    """Top-left offsets of all full ``patch x patch`` windows on a ``stride`` lattice."""
    h, w = image.shape
    return [(r, c) for r in range(0, h - patch + 1, stride) for c in range(0, w - patch + 1, stride)]


def build_dataset(spec: DatasetSpec) -> tuple[PatchSet, PatchSet]:
    """Simulate speckled patches from the sources and split them into train/val.

    Patch ``i`` (in source order) gets speckle seeded by ``derive_seed(seed, 0, i)``,
    so the result does not depend on processing order.
    """
    sources = load_sources(spec)
    p = spec.patch_size
    for s in sources:
        if min(s.image.shape) < p:
            raise ParameterError(f"patch_size {p} exceeds source {s.name!r} of shape {s.image.shape}")

    cleans, recs = [], []
    for s in sources:
        img = s.image.astype(np.float32)
        for r, c in extract_patches(img, p, spec.stride):
            cleans.append(img[r:r + p, c:c + p])
            recs.append((s.name, r, c))
    if spec.max_patches is not None:
        cleans, recs = cleans[:spec.max_patches], recs[:spec.max_patches]
    n = len(cleans)
    if n == 0:
        raise ParameterError("no patch could be extracted")

    clean = np.stack(cleans)
    noisy = np.empty_like(clean)
    seeds = [derive_seed(spec.seed, 0, i) for i in range(n)]
    for i in range(n):
        sp = sample_speckle(p, p, spec.looks, seeds[i], dtype=np.float32)
        noisy[i] = clean[i] * sp.values

    order = np.random.default_rng(derive_seed(spec.seed, 2)).permutation(n)
    n_train = int(round(spec.train_frac * n))
    split_of = np.empty(n, dtype=object)
    split_of[order[:n_train]] = "train"
    split_of[order[n_train:]] = "val"

    def subset(name):
        idx = np.flatnonzero(split_of == name)
        records = [PatchRecord(int(i), name, recs[i][0], recs[i][1], recs[i][2], seeds[i])
                   for i in idx]
        return PatchSet(noisy[idx], clean[idx], records)

    return subset("train"), subset("val")
