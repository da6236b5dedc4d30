"""Multi-objective training loss ``L = L2 + lambda_kl * L_KL + lambda_grad * L_grad``.

Every term is a mean over pixels and returns its exact gradient with respect
to the network output ``xhat``. Arrays may be ``(H, W)`` or ``(B, 1, H, W)``;
spatial operations act on the last two axes.

``L_KL`` compares the distribution of the ratio ``Y / xhat`` with single-look
Rayleigh speckle (sigma = 1/sqrt(2)). The ratio histogram uses triangular
(linear-interpolation) soft binning so that it is differentiable; the log is
natural here, unlike the base-2 metric.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, ShapeError
from .stats import KL_EPS, RAYLEIGH_SIGMA, rayleigh_reference, speckle_bin_edges

EPS_DIV = 1e-3


@dataclass(frozen=True)
class LossWeights:
    lambda_kl: float = 1e4
    lambda_grad: float = 1.0
    use_l2: bool = True
    use_kl: bool = True
    use_grad: bool = True
    kl_pooling: str = "batch"  # or "patch"

    def __post_init__(self):
        if self.lambda_kl < 0 or self.lambda_grad < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.kl_pooling not in ("batch", "patch"):
            raise ValueError("kl_pooling must be 'batch' or 'patch'")

    @classmethod
    def variant(cls, name: str, **kw) -> "LossWeights":
        """Ablation variants: ``L2``, ``Lkl`` (L2 + KL), ``Lgrad`` (L2 + gradient), ``L`` (all)."""
        toggles = {"L2": (False, False), "Lkl": (True, False), "Lgrad": (False, True), "L": (True, True)}
        if name not in toggles:
            raise ValueError(f"unknown loss variant {name!r}; expected one of {sorted(toggles)}")
        use_kl, use_grad = toggles[name]
        return cls(use_kl=use_kl, use_grad=use_grad, **kw)


@dataclass
class LossBreakdown:
    l2: float
    kl: float
    grad: float
    total: float
    lambda_kl: float = 0.0
    lambda_grad: float = 0.0

    def as_row(self) -> dict[str, float]:
        return {"l2": self.l2, "kl": self.kl, "grad": self.grad, "total": self.total}


def _same_shape(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim < 2:
        raise ShapeError("images must have at least two dimensions")
    return a, b


def l2_loss(xhat, x):
    xhat, x = _same_shape(xhat, x)
    d = xhat - x
    return float(np.mean(d * d)), 2.0 * d / d.size


def _forward_diff(a, axis):
    d = np.zeros_like(a)
    n = a.shape[axis]
    hi = [slice(None)] * a.ndim
    lo = [slice(None)] * a.ndim
    hi[axis], lo[axis] = slice(1, n), slice(0, n - 1)
    d[tuple(lo)] = a[tuple(hi)] - a[tuple(lo)]
    return d


def _forward_diff_adjoint(e, axis):
    out = -e.copy()
    n = e.shape[axis]
    hi = [slice(None)] * e.ndim
    lo = [slice(None)] * e.ndim
    hi[axis], lo[axis] = slice(1, n), slice(0, n - 1)
    out[tuple(hi)] += e[tuple(lo)]
    # the last difference is identically zero (replicate boundary)
    last = [slice(None)] * e.ndim
    last[axis] = n - 1
    out[tuple(last)] += e[tuple(last)]
    return out


def image_gradient(a):
    """Forward differences ``(horizontal, vertical)`` with replicate boundary."""
    a = np.asarray(a)
    return _forward_diff(a, -1), _forward_diff(a, -2)


def grad_loss(xhat, x):
    """Per-pixel mean of ``|grad xhat - grad x|^2`` (both components summed)."""
    xhat, x = _same_shape(xhat, x)
    e = xhat - x
    eh, ev = _forward_diff(e, -1), _forward_diff(e, -2)
    n = e.size
    value = float((np.sum(eh * eh) + np.sum(ev * ev)) / n)
    g = 2.0 * (_forward_diff_adjoint(eh, -1) + _forward_diff_adjoint(ev, -2)) / n
    return value, g


class SoftRatioHistogram:
    """Triangular-kernel histogram of ratio values on equal-width bins."""

    def __init__(self, bin_edges=None, sigma: float = RAYLEIGH_SIGMA):
        self.edges = speckle_bin_edges() if bin_edges is None else np.asarray(bin_edges, float)
        self.lo = self.edges[0]
        self.width = float(self.edges[1] - self.edges[0])
        if not np.allclose(np.diff(self.edges), self.width):
            raise ValueError("soft binning needs equal-width bins")
        self.bins = self.edges.size - 1
        self.reference = rayleigh_reference(self.edges, sigma).masses

    def positions(self, r: np.ndarray):
        """Bin-centre coordinates clamped to ``[0, bins - 1]`` and the unclamped mask."""
        u = (r - self.lo) / self.width - 0.5
        inside = (u > 0) & (u < self.bins - 1)
        return np.clip(u, 0.0, self.bins - 1), inside

    def masses(self, r: np.ndarray):
        u, inside = self.positions(r.ravel())
        j0 = np.minimum(np.floor(u).astype(np.int64), self.bins - 2)
        f = u - j0
        counts = (np.bincount(j0, weights=1.0 - f, minlength=self.bins)
                  + np.bincount(j0 + 1, weights=f, minlength=self.bins))
        return counts / r.size, j0, inside


def _kl_pooled(ratio: np.ndarray, hist: SoftRatioHistogram, eps: float):
    """Natural-log KL of one pooled ratio sample and its gradient w.r.t. the ratio values."""
    P, j0, inside = hist.masses(ratio)
    q = hist.reference
    logr = np.log(np.maximum(P, eps) / np.maximum(q, eps))
    nz = P > 0
    value = float(np.sum(P[nz] * logr[nz]))
    # dKL/dP = log(P/Q) + 1; the +1 cancels because each sample's weights sum to 1
    dP_du = (logr[j0 + 1] - logr[j0]) / ratio.size
    dr = np.where(inside, dP_du / hist.width, 0.0).reshape(ratio.shape)
    return value, dr


def kl_loss(xhat, y, hist: SoftRatioHistogram | None = None, pooling: str = "batch",
            eps_div: float = EPS_DIV, eps: float = KL_EPS):
    """KL divergence of the ratio ``Y / max(xhat, eps_div)`` from Rayleigh speckle."""
    xhat, y = _same_shape(xhat, y)
    if not np.any(y):
        raise DegenerateInputError("noisy image is identically zero")
    hist = hist or SoftRatioHistogram()
    denom = np.maximum(xhat, eps_div)
    ratio = y / denom
    if pooling == "batch" or xhat.ndim == 2:
        value, dr = _kl_pooled(ratio, hist, eps)
    else:
        value, dr = 0.0, np.empty_like(ratio)
        n = ratio.shape[0]
        for i in range(n):
            v, d = _kl_pooled(ratio[i], hist, eps)
            value += v / n
            dr[i] = d / n
    dxhat = np.where(xhat > eps_div, -dr * y / (denom * denom), 0.0)
    return value, dxhat.astype(xhat.dtype, copy=False)


def total_loss(xhat, x, y, weights: LossWeights = LossWeights(), hist: SoftRatioHistogram | None = None):
    """Weighted sum of the enabled terms; disabled terms are never evaluated."""
    xhat, x = _same_shape(xhat, x)
    _same_shape(xhat, y)
    grad = np.zeros_like(xhat)
    l2 = kl = gr = 0.0
    if weights.use_l2:
        l2, g = l2_loss(xhat, x)
        grad += g
    if weights.use_kl:
        kl, g = kl_loss(xhat, y, hist, weights.kl_pooling)
        grad += weights.lambda_kl * g
    if weights.use_grad:
        gr, g = grad_loss(xhat, x)
        grad += weights.lambda_grad * g
    lam_kl = weights.lambda_kl if weights.use_kl else 0.0
    lam_gr = weights.lambda_grad if weights.use_grad else 0.0
    total = l2 + lam_kl * kl + lam_gr * gr
    return LossBreakdown(l2, kl, gr, total, lam_kl, lam_gr), grad


__all__ = ["EPS_DIV", "LossBreakdown", "LossWeights", "SoftRatioHistogram", "grad_loss",
           "image_gradient", "kl_loss", "l2_loss", "total_loss"]
