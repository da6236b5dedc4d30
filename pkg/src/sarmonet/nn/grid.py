"""Padded-flat activation layout.

A batch ``(B, C, H, W)`` is stored as a 2-D array of shape ``(n, C)``: each
image is zero padded to ``(H + 2, W + 2)``, images are laid end to end in
row-major order, and ``guard = W + 3`` zero rows sit before and after. In this
layout the 3x3 neighbour ``(dy, dx)`` of every position is a fixed row offset
``dy * (W + 2) + dx``, so each convolution tap is a contiguous slice and needs
no im2col copy. Pad and guard rows are kept at exactly zero by every op; they
double as the convolution's zero padding.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError


class Grid:
    def __init__(self, batch: int, height: int, width: int):
        if batch < 1 or height < 1 or width < 1:
            raise ShapeError(f"invalid batch geometry {(batch, height, width)}")
        self.batch, self.height, self.width = batch, height, width
        self.hp, self.wp = height + 2, width + 2
        self.guard = self.wp + 1
        self.rows = batch * self.hp * self.wp
        self.n = self.rows + 2 * self.guard
        self.count = batch * height * width
        self.offsets = [(dy - 1) * self.wp + (dx - 1) for dy in range(3) for dx in range(3)]

        valid = np.zeros((batch, self.hp, self.wp), dtype=bool)
        valid[:, 1:-1, 1:-1] = True
        valid = np.concatenate([np.zeros(self.guard, bool), valid.ravel(), np.zeros(self.guard, bool)])
        self.valid = valid
        self.mask = valid[:, None].astype(np.float64)
        # pad rows inside the central band, relative to the band start
        self.pad_rows = np.flatnonzero(~valid[self.guard:self.guard + self.rows])

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.batch, self.height, self.width)

    def band(self, a: np.ndarray, shift: int = 0) -> np.ndarray:
        """The ``rows``-long central slice of ``a`` shifted by ``shift`` rows (a view)."""
        g = self.guard + shift
        return a[g:g + self.rows]

    def zero_pad(self, a: np.ndarray) -> np.ndarray:
        """Zero pad and guard rows of ``a`` in place."""
        a[:self.guard] = 0
        a[self.guard + self.rows:] = 0
        self.band(a)[self.pad_rows] = 0
        return a

    def pack(self, x: np.ndarray, dtype=None) -> np.ndarray:
        x = np.asarray(x)
        if x.ndim != 4 or (x.shape[0], x.shape[2], x.shape[3]) != self.shape:
            raise ShapeError(f"expected (B, C, H, W) with B,H,W={self.shape}, got {x.shape}")
        c = x.shape[1]
        out = np.zeros((self.n, c), dtype=dtype or x.dtype)
        view = self.band(out).reshape(self.batch, self.hp, self.wp, c)
        view[:, 1:-1, 1:-1, :] = x.transpose(0, 2, 3, 1)
        return out

    def unpack(self, a: np.ndarray) -> np.ndarray:
        c = a.shape[1]
        view = self.band(a).reshape(self.batch, self.hp, self.wp, c)
        return np.ascontiguousarray(view[:, 1:-1, 1:-1, :].transpose(0, 3, 1, 2))
