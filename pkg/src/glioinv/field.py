"""Voxel grids, gridded fields and pseudo-spectral differential operators.

All fields live on a periodic box.  Arrays are indexed ``[x, y(, z)]`` so that
axis 0 is the x axis; vector and tensor fields carry their components on a
leading axis.  Symmetric tensors are stored as their upper triangle in
row-major order: ``(xx, xy, yy)`` in 2D and ``(xx, xy, xz, yy, yz, zz)`` in 3D.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("GLIO_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class Grid:
    """Regular periodic voxel grid with ``dims`` voxels along each axis."""

    dims: tuple[int, ...]
    spacing: tuple[float, ...]
    origin: tuple[float, ...] = None

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        if len(dims) not in (2, 3):
            raise ValueError(f"grid must be 2D or 3D, got {len(dims)} axes")
        if any(n < 4 or n % 2 for n in dims):
            raise ValueError(f"grid dims must be even and >= 4, got {dims}")
        spacing = tuple(float(h) for h in np.broadcast_to(self.spacing, (len(dims),)))
        if any(not np.isfinite(h) or h <= 0 for h in spacing):
            raise ValueError(f"grid spacing must be positive, got {spacing}")
        origin = self.origin
        origin = (0.0,) * len(dims) if origin is None else tuple(float(o) for o in origin)
        if len(origin) != len(dims):
            raise ValueError("origin length does not match grid dimension")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @classmethod
    def cube(cls, n: int | tuple[int, ...], length: float = 2 * np.pi, ndim: int = 2) -> "Grid":
        """Grid with ``n`` voxels per axis spanning ``length`` along every axis."""
        dims = (n,) * ndim if np.isscalar(n) else tuple(n)
        return cls(dims, tuple(length / d for d in dims))

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    @property
    def extent(self) -> tuple[float, ...]:
        return tuple(n * h for n, h in zip(self.dims, self.spacing))

    @property
    def cell_volume(self) -> float:
        """Quadrature weight ``h^d`` used by every field inner product."""
        return float(np.prod(self.spacing))

    def coords(self) -> list[np.ndarray]:
        """Physical voxel coordinates, one broadcastable array per axis."""
        axes = [o + h * np.arange(n) for o, h, n in zip(self.origin, self.spacing, self.dims)]
        return np.meshgrid(*axes, indexing="ij", sparse=True)

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.vdot(a, b).real) * self.cell_volume

    def norm(self, a: np.ndarray) -> float:
        return float(np.sqrt(self.inner(a, a)))


@dataclass(frozen=True)
class TimeGrid:
    n_steps: int = 10
    horizon: float = 1.0

    def __post_init__(self):
        if int(self.n_steps) < 1:
            raise ValueError("n_steps must be >= 1")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        object.__setattr__(self, "n_steps", int(self.n_steps))
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_steps + 1)


def _check_finite(values: np.ndarray, what: str) -> None:
    bad = ~np.isfinite(values)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ValueError(f"{what} has a non-finite value at index {idx}")


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.grid.dims:
            raise ValueError(f"scalar field shape {v.shape} does not match grid {self.grid.dims}")
        _check_finite(v, "scalar field")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid: Grid) -> "ScalarField":
        return cls(grid, np.zeros(grid.dims))

    def norm(self) -> float:
        return self.grid.norm(self.values)

    def inner(self, other: "ScalarField") -> float:
        return self.grid.inner(self.values, other.values)


@dataclass(frozen=True, eq=False)
class VectorField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.ndim, *self.grid.dims):
            raise ValueError(f"vector field shape {v.shape} does not match grid {self.grid.dims}")
        _check_finite(v, "vector field")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def inner(self, other: "VectorField") -> float:
        return self.grid.inner(self.values, other.values)


def n_sym(ndim: int) -> int:
    return ndim * (ndim + 1) // 2


def sym_index(ndim: int) -> np.ndarray:
    """``idx[a, b]`` = storage slot of tensor component ``(a, b)``."""
    idx = np.empty((ndim, ndim), dtype=int)
    k = 0
    for a in range(ndim):
        for b in range(a, ndim):
            idx[a, b] = idx[b, a] = k
            k += 1
    return idx


def sym_to_full(comps: np.ndarray) -> np.ndarray:
    """Upper-triangle storage ``(ncomp, ...)`` to full matrices ``(..., d, d)``."""
    ndim = {3: 2, 6: 3}[comps.shape[0]]
    idx = sym_index(ndim)
    return np.moveaxis(comps[idx], (0, 1), (-2, -1))


def full_to_sym(mats: np.ndarray) -> np.ndarray:
    """Full matrices ``(..., d, d)`` to symmetrized upper-triangle storage."""
    ndim = mats.shape[-1]
    mats = 0.5 * (mats + np.swapaxes(mats, -1, -2))
    return np.stack([mats[..., a, b] for a in range(ndim) for b in range(a, ndim)])


@dataclass(frozen=True, eq=False)
class TensorField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (n_sym(self.grid.ndim), *self.grid.dims):
            raise ValueError(f"tensor field shape {v.shape} does not match grid {self.grid.dims}")
        _check_finite(v, "tensor field")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def isotropic(cls, grid: Grid, coef: np.ndarray | float) -> "TensorField":
        coef = np.broadcast_to(np.asarray(coef, dtype=float), grid.dims)
        comps = np.zeros((n_sym(grid.ndim), *grid.dims))
        for a, k in enumerate(np.diag(sym_index(grid.ndim))):
            comps[k] = coef
        return cls(grid, comps)

    @classmethod
    def from_matrices(cls, grid: Grid, mats: np.ndarray) -> "TensorField":
        return cls(grid, full_to_sym(np.asarray(mats, dtype=float)))

    def matrices(self) -> np.ndarray:
        """Per-voxel full tensors with shape ``(*dims, d, d)``."""
        return sym_to_full(self.values)

    def eigvalsh(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrices())

    def trace(self) -> np.ndarray:
        return sum(self.values[k] for k in np.diag(sym_index(self.grid.ndim)))

    def apply(self, vec: np.ndarray) -> np.ndarray:
        """Voxelwise product ``K v`` for a vector array of shape ``(d, *dims)``."""
        return tensor_apply(self.values, vec)


def tensor_apply(comps: np.ndarray, vec: np.ndarray) -> np.ndarray:
    ndim = vec.shape[0]
    idx = sym_index(ndim)
    out = np.empty_like(vec)
    for a in range(ndim):
        acc = comps[idx[a, 0]] * vec[0]
        for b in range(1, ndim):
            acc = acc + comps[idx[a, b]] * vec[b]
        out[a] = acc
    return out


class SpectralOps:
    """Cached wavenumbers and FFT-based derivatives for one grid.

    Odd derivatives drop the Nyquist mode, which makes the discrete gradient
    exactly skew-adjoint to the discrete divergence.
    """

    def __init__(self, grid: Grid):
        self.grid = grid
        self.workers = _workers()

    @cached_property
    def wavenumbers(self) -> list[np.ndarray]:
        """``i*k`` multipliers per axis, shaped for the rfftn half-spectrum."""
        g = self.grid
        out = []
        for a, (n, h) in enumerate(zip(g.dims, g.spacing)):
            if a == g.ndim - 1:
                k = 2 * np.pi * sfft.rfftfreq(n, h)
                k[-1] = 0.0
            else:
                k = 2 * np.pi * sfft.fftfreq(n, h)
                k[n // 2] = 0.0
            shape = [1] * g.ndim
            shape[a] = k.size
            out.append(1j * k.reshape(shape))
        return out

    @cached_property
    def laplacian_symbol(self) -> np.ndarray:
        """Symbol of ``div(grad(.))``; non-positive, zero at the mean and Nyquist modes."""
        return sum((ik * ik).real for ik in self.wavenumbers)

    def fft(self, f: np.ndarray) -> np.ndarray:
        return sfft.rfftn(f, workers=self.workers)

    def ifft(self, fh: np.ndarray) -> np.ndarray:
        return sfft.irfftn(fh, s=self.grid.dims, workers=self.workers)

    def gradient(self, f: np.ndarray) -> np.ndarray:
        fh = self.fft(f)
        return np.stack([self.ifft(ik * fh) for ik in self.wavenumbers])

    def divergence(self, v: np.ndarray) -> np.ndarray:
        acc = None
        for ik, comp in zip(self.wavenumbers, v):
            term = ik * self.fft(comp)
            acc = term if acc is None else acc + term
        return self.ifft(acc)

    def diffusion(self, f: np.ndarray, comps: np.ndarray) -> np.ndarray:
        """``div(K grad f)`` for tensor components ``comps``."""
        return self.divergence(tensor_apply(comps, self.gradient(f)))

    def laplacian(self, f: np.ndarray) -> np.ndarray:
        return self.ifft(self.laplacian_symbol * self.fft(f))

    def apply_symbol(self, f: np.ndarray, symbol: np.ndarray) -> np.ndarray:
        return self.ifft(symbol * self.fft(f))


_OPS_CACHE: dict[Grid, SpectralOps] = {}


def spectral_ops(grid: Grid) -> SpectralOps:
    ops = _OPS_CACHE.get(grid)
    if ops is None:
        ops = _OPS_CACHE[grid] = SpectralOps(grid)
    return ops


def _same_grid(a: Grid, b: Grid) -> None:
    if a != b:
        raise ValueError(f"grid mismatch: {a.dims} vs {b.dims}")


def spectral_gradient(f: ScalarField) -> VectorField:
    """Pseudo-spectral gradient of a periodic scalar field."""
    return VectorField(f.grid, spectral_ops(f.grid).gradient(f.values))


def spectral_divergence(v: VectorField) -> ScalarField:
    """Pseudo-spectral divergence; the negative adjoint of :func:`spectral_gradient`."""
    return ScalarField(v.grid, spectral_ops(v.grid).divergence(v.values))


def apply_diffusion(c: ScalarField, K: TensorField) -> ScalarField:
    """Apply the anisotropic diffusion operator ``div(K grad c)``."""
    _same_grid(c.grid, K.grid)
    return ScalarField(c.grid, spectral_ops(c.grid).diffusion(c.values, K.values))
