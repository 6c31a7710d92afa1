"""Tissue maps, DTI-derived tensors and assembly of the diffusion coefficient."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .field import Grid, ScalarField, TensorField, full_to_sym

OTHER, GREY, WHITE = 0, 1, 2

_PSD_TOL = 1e-10


class TensorMode(str, enum.Enum):
    FULL_FA = "full_fa"
    PRINCIPAL = "principal"


@dataclass(frozen=True, eq=False)
class TissueMap:
    grid: Grid
    labels: np.ndarray

    def __post_init__(self):
        lab = np.array(self.labels, dtype=np.int8)
        if lab.shape != self.grid.dims:
            raise ValueError(f"label shape {lab.shape} does not match grid {self.grid.dims}")
        if not np.isin(lab, (OTHER, GREY, WHITE)).all():
            raise ValueError("labels must be OTHER (0), GREY (1) or WHITE (2)")
        lab.flags.writeable = False
        object.__setattr__(self, "labels", lab)

    @property
    def brain(self) -> np.ndarray:
        return self.labels != OTHER

    def white_fraction(self) -> float:
        return float(np.mean(self.labels == WHITE))


@dataclass(frozen=True)
class DiffusionParams:
    """Tissue diffusion rates, anisotropy scale and the out-of-brain penalty.

    Defaults are the non-dimensional operating point: white-matter rate 0.1
    with a five-fold white/grey contrast.
    """

    k_g: float = 0.02
    k_w: float = 0.1
    k_f: float = 0.1
    tensor_mode: TensorMode = TensorMode.FULL_FA
    penalty_eps: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "tensor_mode", TensorMode(self.tensor_mode))
        if not self.k_g > 0:
            raise ValueError("k_g must be positive")
        if self.k_w < self.k_g:
            raise ValueError("k_w must be >= k_g")
        if self.k_f < 0:
            raise ValueError("k_f must be non-negative")
        if not 0 < self.penalty_eps <= 1:
            raise ValueError("penalty_eps must lie in (0, 1]")


def fractional_anisotropy(*lams) -> np.ndarray | float:
    """Fractional anisotropy of two or three eigenvalues (broadcasting).

    In 2D the anisotropy is normalised as ``|l1 - l2| / sqrt(l1^2 + l2^2)`` so
    that a rank-one tensor still maps to 1.  The all-zero tensor maps to 0.
    """
    lams = np.broadcast_arrays(*[np.asarray(l, dtype=float) for l in lams])
    if len(lams) not in (2, 3):
        raise ValueError("fractional anisotropy needs 2 or 3 eigenvalues")
    scale = max(float(np.max(np.abs(l))) for l in lams)
    if any(np.any(l < -_PSD_TOL * max(scale, 1.0)) for l in lams):
        raise ValueError("negative eigenvalue in fractional anisotropy")
    lams = [np.clip(l, 0.0, None) for l in lams]
    sq = sum(l * l for l in lams)
    if len(lams) == 3:
        l1, l2, l3 = lams
        num = np.sqrt(0.5 * ((l1 - l2) ** 2 + (l2 - l3) ** 2 + (l3 - l1) ** 2))
    else:
        num = np.abs(lams[0] - lams[1])
    with np.errstate(invalid="ignore", divide="ignore"):
        fa = np.where(sq > 0, num / np.sqrt(np.where(sq > 0, sq, 1.0)), 0.0)
    fa = np.clip(fa, 0.0, 1.0)
    return float(fa) if fa.ndim == 0 else fa


def _checked_eigh(dti: TensorField) -> tuple[np.ndarray, np.ndarray]:
    w, v = np.linalg.eigh(dti.matrices())
    scale = max(float(np.max(np.abs(w))), 1e-300)
    bad = w[..., 0] < -_PSD_TOL * scale
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ValueError(f"DTI tensor is not positive semi-definite at voxel {idx}")
    return np.clip(w, 0.0, None), v


def build_tensor_full(dti: TensorField) -> TensorField:
    """Anisotropy-weighted tensor ``FA * D`` (all eigenpairs kept)."""
    w, _ = _checked_eigh(dti)
    fa = fractional_anisotropy(*np.moveaxis(w, -1, 0))
    return TensorField(dti.grid, fa * dti.values)


def build_tensor_principal(dti: TensorField) -> TensorField:
    """Rank-one tensor ``l1 e1 e1^T`` from the dominant eigenpair.

    Degenerate leading eigenvalues are resolved in favour of the eigenvector
    whose largest-magnitude component sits on the lowest axis.
    """
    w, v = _checked_eigh(dti)
    d = dti.grid.ndim
    lmax = w[..., -1]
    tied = w >= (lmax - 1e-12 * np.maximum(lmax, 1e-300))[..., None]
    # axis of the largest |component| of each eigenvector; lower wins
    lead_axis = np.argmax(np.abs(v), axis=-2)
    key = np.where(tied, lead_axis, d + 1)
    pick = np.argmin(key, axis=-1)
    e1 = np.take_along_axis(v, pick[..., None, None], axis=-1)[..., 0]
    mats = lmax[..., None, None] * e1[..., :, None] * e1[..., None, :]
    return TensorField(dti.grid, full_to_sym(mats))


def split_K(tissue: TissueMap, T: TensorField, params: DiffusionParams) -> tuple[TensorField, TensorField]:
    """Return ``(K0, TB)`` with ``K = K0 + k_f * TB``.

    ``K0`` holds the tissue rates inside the brain and the isotropic penalty
    floor ``penalty_eps * k_g`` outside; ``TB`` is ``T`` restricted to the brain.
    """
    if tissue.grid != T.grid:
        raise ValueError(f"grid mismatch: {tissue.grid.dims} vs {T.grid.dims}")
    brain = tissue.brain
    if not brain.any():
        raise ValueError("tissue map contains no brain voxels")
    k0 = np.where(tissue.labels == WHITE, params.k_w, params.k_g)
    k0 = np.where(brain, k0, params.penalty_eps * params.k_g)
    K0 = TensorField.isotropic(tissue.grid, k0)
    TB = TensorField(T.grid, np.where(brain, T.values, 0.0))
    return K0, TB


def assemble_K(tissue: TissueMap, T: TensorField, params: DiffusionParams) -> TensorField:
    """Full diffusion coefficient with the fictitious-domain penalty applied."""
    K0, TB = split_K(tissue, T, params)
    return TensorField(K0.grid, K0.values + params.k_f * TB.values)


def build_T(dti: TensorField, mode: TensorMode | str) -> TensorField:
    mode = TensorMode(mode)
    return build_tensor_full(dti) if mode is TensorMode.FULL_FA else build_tensor_principal(dti)


@dataclass(frozen=True)
class AnatomySpec:
    """Geometry of a synthetic ellipsoidal brain.

    Lengths are fractions of the box extent.  ``fiber`` is ``"x"``, ``"y"``,
    ``"z"``, ``"radial"``, ``"circumferential"`` or ``None`` (isotropic white
    matter).
    """

    center: tuple[float, ...] = (0.5, 0.5, 0.5)
    semi_axes: tuple[float, ...] = (0.42, 0.36, 0.36)
    grey_thickness: float = 0.07
    fiber: str | None = "circumferential"
    lambda_fiber: float = 1.0
    lambda_floor: float = 0.2
    lambda_grey: float = 0.4
    jitter: float = 0.0
    seed: int = 0


def _fiber_directions(grid: Grid, spec: AnatomySpec) -> np.ndarray:
    d = grid.ndim
    coords = grid.coords()
    rel = [np.broadcast_to(c - spec.center[a] * grid.extent[a], grid.dims) for a, c in enumerate(coords)]
    if spec.fiber in ("x", "y", "z"):
        axis = "xyz".index(spec.fiber)
        if axis >= d:
            raise ValueError(f"fiber axis {spec.fiber} not available in {d}D")
        f = np.zeros((d, *grid.dims))
        f[axis] = 1.0
        return f
    if spec.fiber == "radial":
        f = np.stack(rel)
    elif spec.fiber == "circumferential":
        f = np.zeros((d, *grid.dims))
        f[0], f[1] = -rel[1], rel[0]
    else:
        raise ValueError(f"unknown fiber field {spec.fiber!r}")
    norm = np.sqrt(np.sum(f * f, axis=0))
    fallback = np.zeros(d)
    fallback[0] = 1.0
    return np.where(norm > 1e-12, f / np.where(norm > 1e-12, norm, 1.0), fallback[(slice(None),) + (None,) * d])


def synth_anatomy(grid: Grid, spec: AnatomySpec = AnatomySpec()) -> tuple[TissueMap, TensorField]:
    """Deterministic ellipsoidal brain: GREY shell around a WHITE core.

    White-matter DTI tensors are ``lambda_fiber * f f^T + lambda_floor * I``
    along the prescribed fiber field ``f``; grey matter is isotropic.
    """
    d = grid.ndim
    center = np.asarray(spec.center[:d], dtype=float)
    axes = np.asarray(spec.semi_axes[:d], dtype=float)
    if len(center) != d or len(axes) != d:
        raise ValueError("anatomy spec has fewer axes than the grid")
    if np.any(axes <= 0) or spec.grey_thickness < 0 or spec.grey_thickness >= axes.min():
        raise ValueError("degenerate ellipsoid in anatomy spec")
    ext = np.asarray(grid.extent)
    rel = [c - center[a] * ext[a] for a, c in enumerate(grid.coords())]

    def inside(semi):
        return sum((r / (s * e)) ** 2 for r, s, e in zip(rel, semi, ext)) <= 1.0

    outer = np.broadcast_to(inside(axes), grid.dims)
    core = np.broadcast_to(inside(axes - spec.grey_thickness), grid.dims)
    labels = np.full(grid.dims, OTHER, dtype=np.int8)
    labels[outer] = GREY
    labels[core] = WHITE
    if not (labels != OTHER).any():
        raise ValueError("degenerate ellipsoid: no brain voxels on this grid")

    eye = np.eye(d)
    mats = np.broadcast_to(spec.lambda_grey * eye, (*grid.dims, d, d)).copy()
    if spec.fiber is not None:
        f = _fiber_directions(grid, spec)
        if spec.jitter > 0:
            rng = np.random.default_rng(spec.seed)
            f = f + spec.jitter * rng.standard_normal(f.shape)
            f /= np.sqrt(np.sum(f * f, axis=0))
        f = np.moveaxis(f, 0, -1)
        white = spec.lambda_fiber * f[..., :, None] * f[..., None, :] + spec.lambda_floor * eye
    else:
        white = np.broadcast_to((spec.lambda_fiber / d + spec.lambda_floor) * eye, (*grid.dims, d, d))
    mats[labels == WHITE] = white[labels == WHITE]
    tissue = TissueMap(grid, labels)
    return tissue, TensorField.from_matrices(grid, mats)


def label_field(tissue: TissueMap) -> ScalarField:
    return ScalarField(tissue.grid, tissue.labels.astype(float))


def tissue_from_field(f: ScalarField) -> TissueMap:
    return TissueMap(f.grid, np.rint(f.values).astype(np.int8))


__all__ = [
    "OTHER", "GREY", "WHITE", "TensorMode", "TissueMap", "DiffusionParams", "AnatomySpec",
    "fractional_anisotropy", "build_tensor_full", "build_tensor_principal", "build_T",
    "split_K", "assemble_K", "synth_anatomy", "label_field", "tissue_from_field",
]
