"""Thresholded observation masks and the diagonal observation operator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .field import Grid, ScalarField


@dataclass(frozen=True, eq=False)
class ObservationMask:
    grid: Grid
    mask: np.ndarray
    threshold: float = 0.0

    def __post_init__(self):
        m = np.array(self.mask, dtype=bool)
        if m.shape != self.grid.dims:
            raise ValueError(f"mask shape {m.shape} does not match grid {self.grid.dims}")
        m.flags.writeable = False
        object.__setattr__(self, "mask", m)

    @classmethod
    def full(cls, grid: Grid) -> "ObservationMask":
        return cls(grid, np.ones(grid.dims, dtype=bool), 0.0)

    @classmethod
    def empty(cls, grid: Grid) -> "ObservationMask":
        return cls(grid, np.zeros(grid.dims, dtype=bool), np.inf)

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    def apply(self, values: np.ndarray) -> np.ndarray:
        return np.where(self.mask, values, 0.0)


def threshold_mask(c: ScalarField, c_d: float) -> ObservationMask:
    """Voxels where ``c >= c_d`` are observed."""
    return ObservationMask(c.grid, c.values >= c_d, float(c_d))


def observe(mask: ObservationMask, c: ScalarField) -> ScalarField:
    """Apply ``O``: keep values on the mask, zero elsewhere."""
    if mask.grid != c.grid:
        raise ValueError("grid mismatch between mask and field")
    return ScalarField(c.grid, mask.apply(c.values))
