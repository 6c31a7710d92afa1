"""Gaussian parametrisation of the initial tumor concentration."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import ndimage

from ..field import Grid, ScalarField
from ..observation import ObservationMask


@dataclass(frozen=True, eq=False)
class GaussianBasis:
    """``c0(x) = sum_j p_j exp(-|x - x_j|^2 / (2 sigma^2))`` on ``grid``."""

    grid: Grid
    centers: np.ndarray
    sigma: float

    def __post_init__(self):
        centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        if centers.shape[1] != self.grid.ndim or centers.shape[0] < 1:
            raise ValueError(f"centers must have shape (n_p, {self.grid.ndim})")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        lo = np.asarray(self.grid.origin)
        hi = lo + np.asarray(self.grid.extent)
        if np.any(centers < lo) or np.any(centers > hi):
            raise ValueError("basis centers must lie inside the domain")
        centers.flags.writeable = False
        object.__setattr__(self, "centers", centers)

    @property
    def n_p(self) -> int:
        return self.centers.shape[0]

    @cached_property
    def matrix(self) -> np.ndarray:
        """Dense ``(n_voxels, n_p)`` basis matrix in C order of the grid."""
        coords = self.grid.coords()
        cols = []
        for ctr in self.centers:
            r2 = sum((x - c) ** 2 for x, c in zip(coords, ctr))
            cols.append(np.exp(-np.broadcast_to(r2, self.grid.dims) / (2 * self.sigma**2)).ravel())
        return np.stack(cols, axis=1)

    def apply(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if p.shape != (self.n_p,):
            raise ValueError(f"coefficient vector must have length {self.n_p}")
        return (self.matrix @ p).reshape(self.grid.dims)

    def apply_transpose(self, f: np.ndarray) -> np.ndarray:
        if f.shape != self.grid.dims:
            raise ValueError("field shape does not match basis grid")
        return self.grid.cell_volume * (self.matrix.T @ f.ravel())


def basis_apply(basis: GaussianBasis, p) -> ScalarField:
    return ScalarField(basis.grid, basis.apply(p))


def basis_apply_transpose(basis: GaussianBasis, f: ScalarField) -> np.ndarray:
    """Discrete adjoint of :func:`basis_apply` in the ``h^d``-weighted inner product."""
    return basis.apply_transpose(f.values)


def lattice_basis(grid: Grid, lo, hi, per_axis, sigma_factor: float = 0.75) -> GaussianBasis:
    """Centers on a regular lattice spanning the box ``[lo, hi]``.

    ``per_axis`` is one count for every axis or a count per axis.  The width
    is ``sigma_factor`` times the largest center spacing.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    counts = np.broadcast_to(np.asarray(per_axis, dtype=int), lo.shape)
    if np.any(counts < 1):
        raise ValueError("per_axis must be >= 1")
    h = np.asarray(grid.spacing)
    mid = 0.5 * (lo + hi)
    axes, gaps = [], []
    for m, a, b, n, hh in zip(mid, lo, hi, counts, h):
        if n == 1:
            axes.append(np.array([m]))
            continue
        span = max(b - a, (n - 1) * hh)
        axes.append(np.linspace(m - span / 2, m + span / 2, n))
        gaps.append(span / (n - 1))
    spacing = max(gaps) if gaps else max(float(np.max(hi - lo)), float(h.max()))
    mesh = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([m.ravel() for m in mesh], axis=1)
    origin = np.asarray(grid.origin)
    centers = np.clip(centers, origin, origin + np.asarray(grid.extent) - h)
    return GaussianBasis(grid, centers, sigma_factor * spacing)


DEFAULT_SPACING = 0.3


def place_basis(mask: ObservationMask, per_axis=None, dilate: int = 2,
                sigma_factor: float = 0.75, spacing: float = DEFAULT_SPACING) -> GaussianBasis:
    """Lattice basis over the bounding box of ``mask`` dilated by ``dilate`` voxels.

    By default centers sit ``spacing`` apart (physical units), so the number
    of basis functions follows the size of the observed region while the
    resolution stays fixed.  An explicit ``per_axis`` count overrides this.
    """
    grid = mask.grid
    m = mask.mask
    if dilate > 0:
        m = ndimage.binary_dilation(m, iterations=dilate)
    if not m.any():
        raise ValueError("cannot place a basis on an empty observation mask")
    idx = np.argwhere(m)
    h = np.asarray(grid.spacing)
    origin = np.asarray(grid.origin)
    lo = origin + idx.min(axis=0) * h
    hi = origin + idx.max(axis=0) * h
    if per_axis is None:
        if not spacing > 0:
            raise ValueError("basis spacing must be positive")
        counts = np.ceil((hi - lo) / spacing - 1e-9).astype(int) + 1
        half = 0.5 * (counts - 1) * spacing
        mid = 0.5 * (lo + hi)
        lo, hi = mid - half, mid + half
        per_axis = counts
    return lattice_basis(grid, lo, hi, per_axis, sigma_factor)
