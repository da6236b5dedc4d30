"""Detection of extremely heterogeneous (not fully developed) points from a ratio image.

Two detectors run on the ratio ``Y / X̂``:

* a ratio-of-means edge detector: for each pixel and each of four
  orientations the window is split into two halves (the centre line is
  excluded) and the response is ``max(m1/m2, m2/m1)``, maximized over
  orientations;
* a patch-wise one-sample Kolmogorov-Smirnov test of the ratio values
  against single-look Rayleigh speckle.

The edge map is dilated and combined with the KS rejections (AND by default).
Flagged pixels are only reported, never refiltered.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ParameterError, ShapeError
from .stats import (GA0_EH, KA_H, FreryParams, ga0_cdf, ka_cdf, ks_critical_value, ks_statistic,
                    rayleigh_cdf)

EDGE_BIT = 1
KS_BIT = 2
SKIPPED = 1.0  # response reported for pixels whose half-window mean is zero


@dataclass(frozen=True)
class DetectConfig:
    edge_window: int = 7
    edge_threshold: float = 1.5
    ks_patch: int = 16
    ks_alpha: float = 0.01
    combine: str = "AND"
    dilation: int = 1

    def __post_init__(self):
        if self.edge_window < 3 or self.edge_window % 2 == 0:
            raise ParameterError("edge_window must be an odd integer >= 3")
        if not self.edge_threshold > 1:
            raise ParameterError("edge_threshold must be > 1")
        if self.ks_patch < 2:
            raise ParameterError("ks_patch must be >= 2")
        if not 0 < self.ks_alpha < 1:
            raise ParameterError("ks_alpha must lie in (0, 1)")
        if self.combine.upper() not in ("AND", "OR"):
            raise ParameterError("combine must be AND or OR")
        if self.dilation < 0:
            raise ParameterError("dilation must be >= 0")


@dataclass
class EdgeMap:
    flags: np.ndarray
    response: np.ndarray
    skipped: np.ndarray


@dataclass
class EHMask:
    flags: np.ndarray
    provenance: np.ndarray  # uint8, EDGE_BIT | KS_BIT
    config: DetectConfig = field(default_factory=DetectConfig)

    @property
    def edge_hit(self) -> np.ndarray:
        return (self.provenance & EDGE_BIT) > 0

    @property
    def ks_hit(self) -> np.ndarray:
        return (self.provenance & KS_BIT) > 0

    def coordinates_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["row", "col", "edge_hit", "ks_hit"])
        for r, c in zip(*np.nonzero(self.flags)):
            p = int(self.provenance[r, c])
            wr.writerow([int(r), int(c), int(bool(p & EDGE_BIT)), int(bool(p & KS_BIT))])
        return buf.getvalue()


def _ratio2d(ratio) -> np.ndarray:
    r = np.asarray(ratio, dtype=np.float64)
    if r.ndim != 2:
        raise ShapeError("ratio image must be 2-D")
    if not np.all(np.isfinite(r)) or np.any(r < 0):
        raise ParameterError("ratio image must be finite and nonnegative")
    return r


def half_masks(window: int):
    """Normalized averaging kernels for the two halves of each orientation."""
    h = window // 2
    yy, xx = np.mgrid[-h:h + 1, -h:h + 1]
    splits = [(xx < 0, xx > 0), (yy < 0, yy > 0), (yy < xx, yy > xx), (yy < -xx, yy > -xx)]
    return [(a / a.sum(), b / b.sum()) for a, b in splits]


def touzi_edge_map(ratio, window: int = 7, threshold: float = 1.5) -> EdgeMap:
    """Ratio-of-means edge response (>= 1) and its thresholded flags.

    Borders are handled by reflection. A pixel where some half-window mean is
    zero is skipped: its response is set to 1 and it is never flagged.
    """
    r = _ratio2d(ratio)
    if window < 3 or window % 2 == 0:
        raise ParameterError("window must be an odd integer >= 3")
    if window > min(r.shape):
        raise ParameterError(f"window {window} does not fit image of shape {r.shape}")
    resp = np.ones_like(r)
    skipped = np.zeros(r.shape, dtype=bool)
    for ka, kb in half_masks(window):
        m1 = ndimage.correlate(r, ka, mode="reflect")
        m2 = ndimage.correlate(r, kb, mode="reflect")
        bad = (m1 <= 0) | (m2 <= 0)
        skipped |= bad
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(bad, SKIPPED, np.maximum(m1 / m2, m2 / m1))
        resp = np.maximum(resp, q)
    resp[skipped] = SKIPPED
    return EdgeMap(resp > threshold, resp, skipped)


def ks_patch_statistics(ratio, patch: int = 16) -> np.ndarray:
    """KS distance vs Rayleigh for each non-overlapping ``patch`` x ``patch`` block."""
    r = _ratio2d(ratio)
    if patch > min(r.shape):
        raise ParameterError(f"patch {patch} larger than image of shape {r.shape}")
    ph, pw = r.shape[0] // patch, r.shape[1] // patch
    blocks = r[:ph * patch, :pw * patch].reshape(ph, patch, pw, patch).transpose(0, 2, 1, 3)
    x = np.sort(blocks.reshape(ph, pw, patch * patch), axis=-1)
    n = patch * patch
    F = rayleigh_cdf(x)
    i = np.arange(1, n + 1)
    d = np.maximum(np.max(i / n - F, axis=-1), np.max(F - (i - 1) / n, axis=-1))
    return d


def ks_patch_map(ratio, patch: int = 16, alpha: float = 0.01):
    """Per-patch rejections and the same map expanded to pixel geometry.

    Rows and columns beyond the last whole patch are never rejected.
    """
    r = _ratio2d(ratio)
    d = ks_patch_statistics(r, patch)
    reject = d > ks_critical_value(alpha, patch * patch)
    pix = np.zeros(r.shape, dtype=bool)
    ph, pw = reject.shape
    pix[:ph * patch, :pw * patch] = np.kron(reject, np.ones((patch, patch), dtype=bool))
    return reject, pix


def combine_eh_mask(edge_flags, ks_flags, config: DetectConfig = DetectConfig()) -> EHMask:
    e = np.asarray(edge_flags, dtype=bool)
    k = np.asarray(ks_flags, dtype=bool)
    if e.shape != k.shape:
        raise ShapeError(f"edge map {e.shape} and KS map {k.shape} differ in geometry")
    if config.dilation > 0:
        size = 2 * config.dilation + 1
        e = ndimage.binary_dilation(e, structure=np.ones((size, size), dtype=bool))
    prov = (e * EDGE_BIT + k * KS_BIT).astype(np.uint8)
    flags = (e & k) if config.combine.upper() == "AND" else (e | k)
    return EHMask(flags, prov, config)


def detect(ratio, config: DetectConfig = DetectConfig()) -> EHMask:
    edge = touzi_edge_map(ratio, config.edge_window, config.edge_threshold)
    _, ks = ks_patch_map(ratio, config.ks_patch, config.ks_alpha)
    return combine_eh_mask(edge.flags, ks, config)


def planted_ratio_scene(height: int, width: int, k: float = 5.0, density: float = 1e-3, seed=None):
    """Rayleigh ratio field with isolated deterministic scatterers of ratio ``k``.

    This is the ratio an ideal filter leaves on a speckled constant background
    with non-speckled point targets ``k`` times brighter. Returns ``(ratio, mask)``.
    """
    from .speckle import point_scatterer_scene, sample_speckle

    rng = np.random.default_rng(seed)
    _, mask = point_scatterer_scene(height, width, background=1.0 / k, k=k, density=density, seed=rng)
    ratio = sample_speckle(height, width, 1, rng, dtype=np.float64).values
    ratio[mask] = k
    return ratio, mask


# --------------------------------------------------------------------------
# population validation


@dataclass
class PopulationFit:
    name: str
    size: int
    ks_ga0: float | None
    ks_ka: float | None
    centers: np.ndarray
    empirical: np.ndarray
    ga0_density: np.ndarray
    ka_density: np.ndarray

    @property
    def inconclusive(self) -> bool:
        return self.size == 0


@dataclass
class FitReport:
    eh: PopulationFit
    h: PopulationFit
    ga0: FreryParams = GA0_EH
    ka: FreryParams = KA_H

    @property
    def inconclusive(self) -> bool:
        return self.eh.inconclusive or self.h.inconclusive

    def summary_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["population", "size", "ks_ga0", "ks_ka", "inconclusive"])
        for p in (self.eh, self.h):
            wr.writerow([p.name, p.size, "" if p.ks_ga0 is None else repr(p.ks_ga0),
                         "" if p.ks_ka is None else repr(p.ks_ka), int(p.inconclusive)])
        return buf.getvalue()

    def curves_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["population", "bin_center", "empirical_density", "ga0_density", "ka_density"])
        for p in (self.eh, self.h):
            for row in zip(p.centers, p.empirical, p.ga0_density, p.ka_density):
                wr.writerow([p.name] + [repr(float(v)) for v in row])
        return buf.getvalue()


def _fit(name, pix, edges, ga0: FreryParams, ka: FreryParams) -> PopulationFit:
    widths = np.diff(edges)
    centers = 0.5 * (edges[:-1] + edges[1:])
    ga0_d = np.diff(ga0_cdf(edges, ga0)) / widths
    ka_d = np.diff(ka_cdf(edges, ka)) / widths
    if pix.size == 0:
        return PopulationFit(name, 0, None, None, centers, np.zeros_like(centers), ga0_d, ka_d)
    counts, _ = np.histogram(np.clip(pix, edges[0], edges[-1]), bins=edges)
    emp = counts / (pix.size * widths)
    return PopulationFit(name, int(pix.size), ks_statistic(pix, lambda z: ga0_cdf(z, ga0)),
                         ks_statistic(pix, lambda z: ka_cdf(z, ka)), centers, emp, ga0_d, ka_d)


def validate_populations(sar, mask, bins: int = 100, upper: float | None = None,
                         ga0: FreryParams = GA0_EH, ka: FreryParams = KA_H) -> FitReport:
    """KS distances of flagged (EH) and unflagged (H) amplitudes against G_A0 and K_A.

    Curves are densities per bin on ``[0, upper]`` (default: the 99.5th
    percentile of ``sar``); values above ``upper`` are counted in the last bin.
    """
    a = np.asarray(sar, dtype=np.float64)
    m = mask.flags if isinstance(mask, EHMask) else np.asarray(mask, dtype=bool)
    if a.shape != m.shape:
        raise ShapeError(f"image {a.shape} and mask {m.shape} differ")
    upper = float(np.percentile(a, 99.5)) if upper is None else float(upper)
    if not upper > 0:
        raise ParameterError("histogram upper bound must be positive")
    edges = np.linspace(0.0, upper, bins + 1)
    return FitReport(_fit("EH", a[m], edges, ga0, ka), _fit("H", a[~m], edges, ga0, ka), ga0, ka)


__all__ = [
    "DetectConfig", "EDGE_BIT", "EHMask", "EdgeMap", "FitReport", "KS_BIT", "PopulationFit",
    "SKIPPED", "combine_eh_mask", "detect", "half_masks", "ks_patch_map", "ks_patch_statistics",
    "planted_ratio_scene", "touzi_edge_map", "validate_populations",
]
