"""Despeckling quality metrics.

Reference metrics (need the clean image): SSIM, MSE, SNR.
No-reference metrics (need only the noisy and filtered images): ENL, the
GLCM homogeneity distance ``delta_h``, residual ENL, ratio mean deviation,
an M-index aggregate and the KL divergence of the ratio image from
Rayleigh speckle.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .errors import DegenerateInputError, ParameterError, ShapeError
from .loss import EPS_DIV
from .stats import histogram, kl_divergence, rayleigh_reference, speckle_bin_edges


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


# --------------------------------------------------------------------------
# reference metrics


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    k = np.exp(-r * r / (2 * sigma * sigma))
    return k / k.sum()


def ssim(xhat, x, data_range: float = 1.0, win: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM over all fully contained 11x11 Gaussian windows."""
    a, b = _pair(xhat, x)
    if a.ndim != 2:
        raise ShapeError("ssim expects 2-D images")
    win = min(win, *a.shape)
    if win % 2 == 0:
        win -= 1
    k = _gaussian_kernel(win, sigma)

    def filt(z):
        z = ndimage.correlate1d(z, k, axis=0, mode="reflect")
        return ndimage.correlate1d(z, k, axis=1, mode="reflect")

    mu_a, mu_b = filt(a), filt(b)
    saa = filt(a * a) - mu_a * mu_a
    sbb = filt(b * b) - mu_b * mu_b
    sab = filt(a * b) - mu_a * mu_b
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    s = ((2 * mu_a * mu_b + c1) * (2 * sab + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2))
    p = (win - 1) // 2
    return float(s[p:s.shape[0] - p, p:s.shape[1] - p].mean())


def mse(xhat, x) -> float:
    a, b = _pair(xhat, x)
    return float(np.mean((a - b) ** 2))


def snr(xhat, x) -> float:
    """``10 log10(sum X^2 / sum (X - xhat)^2)`` in dB; ``inf`` for a perfect estimate."""
    a, b = _pair(xhat, x)
    err = np.sum((b - a) ** 2)
    if err == 0:
        return math.inf
    return float(10 * np.log10(np.sum(b * b) / err))


# --------------------------------------------------------------------------
# regions of interest


@dataclass
class Roi:
    rects: list[tuple[int, int, int, int]]  # (row, col, height, width)

    def validate(self, shape) -> None:
        if not self.rects:
            raise ParameterError("empty ROI set")
        occupied = np.zeros(shape, dtype=bool)
        for r, c, h, w in self.rects:
            if h < 1 or w < 1 or r < 0 or c < 0 or r + h > shape[0] or c + w > shape[1]:
                raise ParameterError(f"ROI {(r, c, h, w)} outside image of shape {shape}")
            if occupied[r:r + h, c:c + w].any():
                raise ParameterError(f"ROI {(r, c, h, w)} overlaps another ROI")
            occupied[r:r + h, c:c + w] = True

    def patches(self, image):
        for r, c, h, w in self.rects:
            yield image[r:r + h, c:c + w]

    @classmethod
    def whole(cls, shape) -> "Roi":
        return cls([(0, 0, shape[0], shape[1])])


def select_homogeneous_rois(image, size: int = 32, n: int = 4) -> Roi:
    """The ``n`` non-overlapping ``size``-square windows with the lowest intensity CV."""
    img = np.asarray(image, dtype=np.float64)
    inten = img * img
    cands = []
    for r in range(0, img.shape[0] - size + 1, size):
        for c in range(0, img.shape[1] - size + 1, size):
            p = inten[r:r + size, c:c + size]
            m = p.mean()
            if m > 0:
                cands.append((p.std() / m, r, c))
    if not cands:
        raise ParameterError(f"no {size}x{size} window with nonzero mean fits the image")
    cands.sort()
    return Roi([(r, c, size, size) for _, r, c in cands[:n]])


# --------------------------------------------------------------------------
# no-reference metrics


def _enl_pixels(pix: np.ndarray) -> float:
    if pix.size < 2:
        raise DegenerateInputError("ENL needs at least two pixels")
    inten = pix.astype(np.float64) ** 2
    var = inten.var()
    if var == 0:
        raise DegenerateInputError("ENL undefined on a region of constant intensity")
    return float(inten.mean() ** 2 / var)


def enl(image, roi: Roi | None = None) -> float:
    """Equivalent number of looks ``E[I]^2 / Var(I)`` on intensity ``I = image^2`` over the ROI."""
    img = np.asarray(image)
    roi = roi or Roi.whole(img.shape)
    roi.validate(img.shape)
    return _enl_pixels(np.concatenate([p.ravel() for p in roi.patches(img)]))


def quantize(image, levels: int) -> np.ndarray:
    """Integer levels ``0..levels-1`` spanning ``[min, 99.5th percentile]`` (values above clip)."""
    if levels < 2:
        raise ParameterError("levels must be >= 2")
    img = np.asarray(image, dtype=np.float64)
    if img.size == 0:
        raise ParameterError("empty image")
    lo, hi = img.min(), np.percentile(img, 99.5)
    if hi <= lo:
        return np.zeros(img.shape, dtype=np.int64)
    q = np.floor((img - lo) / (hi - lo) * levels).astype(np.int64)
    return np.clip(q, 0, levels - 1)


def glcm(levels_img: np.ndarray, levels: int, offset=(0, 1), symmetric: bool = True) -> np.ndarray:
    """Normalized co-occurrence matrix of an already quantized image."""
    dr, dc = offset
    h, w = levels_img.shape
    a = levels_img[max(0, -dr):h - max(0, dr), max(0, -dc):w - max(0, dc)]
    b = levels_img[max(0, dr):h - max(0, -dr) or None, max(0, dc):w - max(0, -dc) or None]
    b = b[:a.shape[0], :a.shape[1]]
    m = np.bincount((a * levels + b).ravel(), minlength=levels * levels).reshape(levels, levels)
    m = m.astype(np.float64)
    if symmetric:
        m = m + m.T
    total = m.sum()
    if total == 0:
        raise ParameterError("image too small for the GLCM offset")
    return m / total


def _homogeneity(p: np.ndarray) -> float:
    i, j = np.indices(p.shape)
    return float(np.sum(p / (1.0 + (i - j) ** 2)))


def glcm_homogeneity(image, levels: int = 64, offset=(0, 1)) -> float:
    """Haralick homogeneity ``sum p(i,j) / (1 + (i-j)^2)``; a constant image gives 1."""
    q = quantize(image, levels)
    return _homogeneity(glcm(q, levels, offset))


def delta_h(ratio, permutations: int = 8, seed: int = 0, levels: int = 64, offset=(0, 1)) -> float:
    """Relative homogeneity change between the ratio image and random permutations of it."""
    q = quantize(ratio, levels)
    h0 = _homogeneity(glcm(q, levels, offset))
    rng = np.random.default_rng(seed)
    flat = q.ravel()
    hg = np.mean([_homogeneity(glcm(rng.permutation(flat).reshape(q.shape), levels, offset))
                  for _ in range(permutations)])
    return float(abs(h0 - hg) / h0)


def ratio_image(noisy, filtered, eps_div: float = EPS_DIV) -> np.ndarray:
    y, xh = _pair(noisy, filtered)
    return y / np.maximum(xh, eps_div)


def residual_enl(noisy, ratio, roi: Roi) -> float:
    """Mean relative difference between per-ROI ENL of the noisy and the ratio image."""
    y, r = _pair(noisy, ratio)
    roi.validate(y.shape)
    vals = []
    for py, pr in zip(roi.patches(y), roi.patches(r)):
        e_noisy = _enl_pixels(py)
        vals.append(abs(e_noisy - _enl_pixels(pr)) / e_noisy)
    return float(np.mean(vals))


def r_mu(ratio, roi: Roi) -> float:
    r = np.asarray(ratio, dtype=np.float64)
    roi.validate(r.shape)
    return float(np.mean([abs(1.0 - p.mean()) for p in roi.patches(r)]))


def mu_ratio(ratio) -> float:
    return float(np.mean(ratio))


@dataclass(frozen=True)
class MIndexWeights:
    """Surrogate aggregate ``w_h * delta_h + w_mu * r_mu + w_enl * r_enl``.

    The defaults are a documented stand-in, not the published index.
    """

    delta_h: float = 50.0
    r_mu: float = 50.0
    r_enl: float = 0.5


def m_index(delta_h_value: float, r_enl_value: float, r_mu_value: float,
            weights: MIndexWeights = MIndexWeights()) -> float:
    if min(weights.delta_h, weights.r_mu, weights.r_enl) < 0:
        raise ParameterError("M-index weights must be nonnegative")
    return float(weights.delta_h * delta_h_value + weights.r_mu * r_mu_value
                 + weights.r_enl * r_enl_value)


def dkl_ratio(ratio, bin_edges=None) -> float:
    """Base-2 KL of the ratio histogram (256 bins on [0, 4]) from per-bin Rayleigh masses."""
    r = np.asarray(ratio, dtype=np.float64)
    if r.size == 0:
        raise ParameterError("empty ratio image")
    edges = speckle_bin_edges() if bin_edges is None else bin_edges
    return kl_divergence(histogram(r, edges), rayleigh_reference(edges), base=2.0)


# --------------------------------------------------------------------------
# report

REPORT_COLUMNS = ("ssim", "mse", "snr", "enl", "delta_h", "r_enl", "r_mu", "mu_ratio", "m_index", "d_kl")
TABLE_COLUMNS = ("m_index", "delta_h", "r_enl", "mu_ratio", "d_kl", "enl")


@dataclass
class MetricsReport:
    ssim: float | None = None
    mse: float | None = None
    snr: float | None = None
    enl: float | None = None
    delta_h: float | None = None
    r_enl: float | None = None
    r_mu: float | None = None
    mu_ratio: float | None = None
    m_index: float | None = None
    d_kl: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)

    def csv_row(self) -> list[str]:
        return ["" if v is None else repr(float(v)) for v in (getattr(self, c) for c in REPORT_COLUMNS)]

    def to_csv(self, label: str | None = None) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow((["name"] if label is not None else []) + list(REPORT_COLUMNS))
        wr.writerow(([label] if label is not None else []) + self.csv_row())
        return buf.getvalue()

    def table(self, label: str = "filtered") -> str:
        head = f"{'':12s}" + "".join(f"{c:>11s}" for c in TABLE_COLUMNS)
        cells = []
        for c in TABLE_COLUMNS:
            v = getattr(self, c)
            cells.append(f"{'-':>11s}" if v is None else f"{v:11.4f}")
        return head + "\n" + f"{label:12s}" + "".join(cells)


def evaluate(noisy, filtered, clean=None, roi: Roi | None = None, permutations: int = 8,
             seed: int = 0, weights: MIndexWeights = MIndexWeights()) -> MetricsReport:
    """Full report; reference columns stay ``None`` when ``clean`` is not given."""
    y, xh = _pair(noisy, filtered)
    roi = roi or select_homogeneous_rois(y, size=min(32, *y.shape), n=4)
    ratio = ratio_image(y, xh)
    rep = MetricsReport()
    if clean is not None:
        rep.ssim, rep.mse, rep.snr = ssim(xh, clean), mse(xh, clean), snr(xh, clean)
    try:
        rep.enl = enl(xh, roi)
    except DegenerateInputError:
        rep.enl = float("inf")  # perfectly flat estimate over the ROIs
    rep.delta_h = delta_h(ratio, permutations, seed)
    rep.r_enl = residual_enl(y, ratio, roi)
    rep.r_mu = r_mu(ratio, roi)
    rep.mu_ratio = mu_ratio(ratio)
    rep.m_index = m_index(rep.delta_h, rep.r_enl, rep.r_mu, weights)
    rep.d_kl = dkl_ratio(ratio)
    return rep


__all__ = [
    "MIndexWeights", "MetricsReport", "REPORT_COLUMNS", "Roi", "delta_h", "dkl_ratio", "enl",
    "evaluate", "glcm", "glcm_homogeneity", "m_index", "mse", "mu_ratio", "quantize", "r_mu",
    "ratio_image", "residual_enl", "select_homogeneous_rois", "snr", "ssim",
]
