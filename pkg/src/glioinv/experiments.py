"""Synthetic test cases, noisy partial observations, metrics and report tables.

Targets live on a synthetic ellipsoidal anatomy, so the numbers produced here
are comparable with published tables only in trend, never in value.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .anatomy import AnatomySpec, DiffusionParams, TensorMode, assemble_K, build_T, synth_anatomy
from .field import Grid, ScalarField, TensorField, TimeGrid
from .forward import Trajectory, forward_solve
from .inversion.basis import DEFAULT_SPACING, place_basis
from .inversion.newton import InversionState, NewtonOptions, newton_solve
from .inversion.reduced import InverseProblem
from .krylov import ConvergenceError
from .observation import observe, threshold_mask

log = logging.getLogger(__name__)

MARGIN_CUTOFF = 0.01
REPORT_HEADER = ["c_d", "eta", "eps_kf", "eps_0", "JI_0", "eps_1", "JI_1", "eps_2", "JI_2"]
DISCLAIMER = ("Synthetic ellipsoidal anatomy with analytic fiber fields: values are comparable "
              "with published tables in trend only, not in magnitude.")


@dataclass(frozen=True)
class Focus:
    """Gaussian seed of the target; ``center`` in fractions of the box, ``width`` physical."""

    center: tuple[float, ...]
    amplitude: float = 1.0
    width: float = 0.3


@dataclass(frozen=True)
class TestCaseSpec:
    __test__ = False  # keep pytest from collecting this class

    case_id: int
    tensor_mode: TensorMode
    foci: tuple[Focus, ...]
    k_f_true: float = 0.1
    c_d_list: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4)
    eta_list: tuple[float, ...] = (0.01, 0.05, 0.10)
    ndim: int = 2
    n: int = 64
    n_steps: int = 10
    rho: float = 2.0
    k_g: float = 0.02
    k_w: float = 0.1
    penalty_eps: float = 1e-3
    per_axis: int | None = None
    basis_spacing: float = DEFAULT_SPACING
    seed: int = 0
    anatomy: AnatomySpec = field(default_factory=AnatomySpec)

    def __post_init__(self):
        object.__setattr__(self, "tensor_mode", TensorMode(self.tensor_mode))
        if self.case_id not in (1, 2, 3, 4):
            raise ValueError("case_id must be 1, 2, 3 or 4")
        if not self.foci:
            raise ValueError("at least one focus is required")
        if self.case_id == 3 and len(self.foci) < 2:
            raise ValueError("case 3 is multifocal and needs at least two foci")
        if not self.k_f_true > 0:
            raise ValueError("k_f_true must be positive")
        if self.ndim not in (2, 3):
            raise ValueError("ndim must be 2 or 3")
        if any(not 0 <= c < 1 for c in self.c_d_list):
            raise ValueError("c_d values must lie in [0, 1)")
        if any(e < 0 for e in self.eta_list):
            raise ValueError("eta values must be non-negative")

    @property
    def invert_kf(self) -> bool:
        return self.case_id != 1

    @property
    def grid(self) -> Grid:
        return Grid.cube(self.n, ndim=self.ndim)

    @property
    def time_grid(self) -> TimeGrid:
        return TimeGrid(self.n_steps, 1.0)

    @property
    def params(self) -> DiffusionParams:
        return DiffusionParams(self.k_g, self.k_w, self.k_f_true, self.tensor_mode, self.penalty_eps)


def _focus(center, width=0.3) -> Focus:
    return Focus(tuple(center), 1.0, width)


def preset(case_id: int, ndim: int | None = None, **overrides) -> TestCaseSpec:
    """Test cases 1-4: known k_f, unknown k_f, multifocal, principal-direction tensor.

    Case 3 defaults to 2D and the others to 3D (on a 32^3 grid); pass
    ``ndim=2`` for the 64^2 desk-scale variants.
    """
    if ndim is None:
        ndim = 2 if case_id == 3 else 3
    if ndim == 2:
        mono = (_focus((0.64, 0.49)),)
        multi = (_focus((0.64, 0.49)), _focus((0.40, 0.58)))
    else:
        mono = (_focus((0.64, 0.49, 0.5)),)
        multi = (_focus((0.64, 0.49, 0.5)), _focus((0.40, 0.58, 0.5)))
    base = dict(ndim=ndim, n=64 if ndim == 2 else 32)
    if case_id == 1:
        spec = dict(case_id=1, tensor_mode=TensorMode.FULL_FA, foci=mono, c_d_list=(0.1, 0.2, 0.4))
    elif case_id == 2:
        spec = dict(case_id=2, tensor_mode=TensorMode.FULL_FA, foci=mono)
    elif case_id == 3:
        spec = dict(case_id=3, tensor_mode=TensorMode.FULL_FA, foci=multi)
    elif case_id == 4:
        spec = dict(case_id=4, tensor_mode=TensorMode.PRINCIPAL, foci=mono, c_d_list=(0.2, 0.4))
    else:
        raise ValueError("case_id must be 1, 2, 3 or 4")
    base.update(spec)
    base.update(overrides)
    return TestCaseSpec(**base)


@dataclass(eq=False)
class Target:
    """Anatomy, model tensors and the target trajectory over ``[0, 2]``."""

    spec: TestCaseSpec
    tissue: object
    dti: TensorField
    T: TensorField
    K: TensorField
    traj: Trajectory

    @property
    def grid(self) -> Grid:
        return self.traj.grid

    def at(self, t: int) -> ScalarField:
        return self.traj.at(t * self.spec.n_steps)


def gaussian_foci(grid: Grid, foci) -> np.ndarray:
    """Superposition of the foci clamped to ``[0, 1]``."""
    out = np.zeros(grid.dims)
    ext = np.asarray(grid.extent)
    coords = grid.coords()
    for f in foci:
        x0 = np.asarray(f.center[: grid.ndim], dtype=float) * ext + np.asarray(grid.origin)
        r2 = sum((c - x) ** 2 for c, x in zip(coords, x0))
        out = out + f.amplitude * np.exp(-r2 / (2.0 * f.width ** 2))
    return np.clip(out, 0.0, 1.0)


def make_target(spec: TestCaseSpec) -> Target:
    """Seed the foci and run the true model (tensor mode and ``k_f``) to ``t = 2``."""
    grid = spec.grid
    tissue, dti = synth_anatomy(grid, spec.anatomy)
    for f in spec.foci:
        idx = tuple(int(i) for i in np.floor(np.asarray(f.center[: grid.ndim]) * np.asarray(grid.dims)))
        if len(f.center) < grid.ndim or not tissue.brain[idx]:
            raise ValueError(f"focus at {f.center} lies outside the brain")
    c0 = gaussian_foci(grid, spec.foci)
    T = build_T(dti, spec.tensor_mode)
    K = assemble_K(tissue, T, spec.params)
    tg = TimeGrid(2 * spec.n_steps, 2.0)
    traj = forward_solve(ScalarField(grid, c0), K, spec.rho, tg)
    return Target(spec, tissue, dti, T, K, traj)


# -- noise and metrics ---------------------------------------------------------

def add_noise(d: ScalarField, eta: float, seed=None, *, clamp: bool = True,
              support: np.ndarray | None = None) -> ScalarField:
    """Add white noise of relative L2 size ``eta`` on the support of ``d``.

    The noise is normalised so that ``||n|| / ||d|| = eta`` exactly before
    clamping to ``[0, 1]``.  ``seed`` may be an int or a ``numpy`` Generator.
    ``support`` narrows the noisy voxels further (``d`` is still the reference
    for the norm).
    """
    if eta < 0:
        raise ValueError("eta must be non-negative")
    v = d.values
    if eta == 0:
        return ScalarField(d.grid, v)
    support = v > 0 if support is None else (v > 0) & np.asarray(support, dtype=bool)
    dn = float(np.linalg.norm(v))
    if not support.any() or dn == 0:
        warnings.warn("add_noise on an all-zero field; returning it unchanged")
        return ScalarField(d.grid, v)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = np.where(support, rng.standard_normal(v.shape), 0.0)
    n *= eta * dn / float(np.linalg.norm(n))
    out = v + n
    if clamp:
        out = np.clip(out, 0.0, 1.0)
    return ScalarField(d.grid, out)


def margin(c: ScalarField, c_d: float) -> ScalarField:
    """Invisible infiltration: ``c`` where ``0.01 <= c < c_d``, zero elsewhere."""
    v = c.values
    return ScalarField(c.grid, np.where((v >= MARGIN_CUTOFF) & (v < c_d), v, 0.0))


def rel_error(c, c_star) -> float:
    a = np.asarray(getattr(c, "values", c), dtype=float)
    b = np.asarray(getattr(c_star, "values", c_star), dtype=float)
    nb = float(np.linalg.norm(b))
    if nb == 0:
        raise ValueError("reference field is identically zero")
    return float(np.linalg.norm(a - b)) / nb


def jaccard(m, m_star) -> float:
    """Intersection over union of the supports (``H(0) = 0``)."""
    a = np.asarray(getattr(m, "values", m)) > 0
    b = np.asarray(getattr(m_star, "values", m_star)) > 0
    union = int(np.count_nonzero(a | b))
    if union == 0:
        warnings.warn("both margins are empty; Jaccard index set to 1")
        return 1.0
    return int(np.count_nonzero(a & b)) / union


def kf_error(k_f: float, k_f_star: float) -> float:
    if k_f_star == 0:
        raise ValueError("k_f error is undefined for a zero target")
    return abs(k_f - k_f_star) / abs(k_f_star)


# -- one (c_d, eta) cell -------------------------------------------------------

@dataclass
class MetricsRow:
    c_d: float
    eta: float
    eps_kf: float | None = None
    eps_0: float = float("nan")
    JI_0: float = float("nan")
    eps_1: float = float("nan")
    JI_1: float = float("nan")
    eps_2: float = float("nan")
    JI_2: float = float("nan")
    k_f: float = float("nan")
    status: str = "missing"
    newton_iterations: int = 0
    warm_iterations: int = 0
    mean_cg: float = float("nan")

    @property
    def missing(self) -> bool:
        return self.status in ("missing", "failed", "line_search_failed")

    def csv_fields(self) -> list[str]:
        c_d, eta = f"{self.c_d:.2f}", f"{self.eta:.2f}"
        if self.missing:
            return [c_d, eta] + ["NA"] * 7
        eps_kf = "" if self.eps_kf is None else f"{self.eps_kf:.3e}"
        return [c_d, eta, eps_kf, f"{self.eps_0:.3e}", f"{self.JI_0:.3f}", f"{self.eps_1:.3e}",
                f"{self.JI_1:.3f}", f"{self.eps_2:.3e}", f"{self.JI_2:.3f}"]


@dataclass(eq=False)
class CellData:
    """Noisy partial observations of one cell and the inverse problem built from them."""

    problem: InverseProblem
    noisy0: ScalarField
    noisy1: ScalarField


def cell_seed(seed: int, c_d: float, eta: float) -> np.random.SeedSequence:
    """Independent, reproducible RNG stream per ``(seed, c_d, eta)``."""
    return np.random.SeedSequence([int(seed), int(round(c_d * 1e6)), int(round(eta * 1e6))])


def build_cell(target: Target, c_d: float, eta: float, beta_p: float = 1e-2,
               per_axis: int | None = None) -> CellData:
    """Noise both snapshots, threshold the noisy data into frozen masks, and place the basis.

    The basis covers the region where the noisy ``t=0`` data is at least
    ``max(c_d, 0.01)``, so that ``c_d = 0`` does not spread it over the box.
    """
    spec = target.spec
    rng = np.random.default_rng(cell_seed(spec.seed, c_d, eta))
    # Gaussian tails are positive on every voxel; keep the noise on the tumor itself
    c0, c1 = target.at(0), target.at(1)
    noisy0 = add_noise(c0, eta, rng, support=c0.values >= MARGIN_CUTOFF)
    noisy1 = add_noise(c1, eta, rng, support=c1.values >= MARGIN_CUTOFF)
    m0 = threshold_mask(noisy0, c_d)
    m1 = threshold_mask(noisy1, c_d)
    support = threshold_mask(noisy0, max(c_d, MARGIN_CUTOFF))
    basis = place_basis(support, per_axis if per_axis is not None else spec.per_axis,
                        spacing=spec.basis_spacing)
    problem = InverseProblem(observe(m0, noisy0), observe(m1, noisy1), m0, m1, basis,
                             target.tissue, target.T, spec.params, spec.rho, spec.time_grid,
                             beta_p, spec.invert_kf)
    return CellData(problem, noisy0, noisy1)


@dataclass(eq=False)
class Reconstruction:
    state: InversionState
    traj: Trajectory  # reconstructed trajectory over [0, 2]

    def at(self, t: int) -> ScalarField:
        return self.traj.at(t * (self.traj.time_grid.n_steps // 2))


def reconstruct(target: Target, state: InversionState) -> Reconstruction:
    """Predict to ``t = 2`` from the clamped reconstruction with the recovered ``k_f``."""
    spec = target.spec
    c0 = np.clip(state.point.traj.states[0], 0.0, 1.0)
    params = dataclasses.replace(spec.params, k_f=max(float(state.k_f), 0.0))
    K = assemble_K(target.tissue, target.T, params)
    traj = forward_solve(ScalarField(target.grid, c0), K, spec.rho, TimeGrid(2 * spec.n_steps, 2.0))
    return Reconstruction(state, traj)


def score(target: Target, rec: Reconstruction, c_d: float, eta: float) -> MetricsRow:
    spec = target.spec
    row = MetricsRow(c_d, eta)
    if spec.invert_kf:
        row.eps_kf = kf_error(rec.state.k_f, spec.k_f_true)
    for t in range(3):
        c, cs = rec.at(t), target.at(t)
        setattr(row, f"eps_{t}", rel_error(c, cs))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            setattr(row, f"JI_{t}", jaccard(margin(c, c_d), margin(cs, c_d)))
    st = rec.state
    row.k_f = float(st.k_f)
    row.status = st.status
    row.newton_iterations = st.newton_iterations
    row.warm_iterations = st.warm_iterations
    row.mean_cg = st.mean_cg_iterations()
    return row


def run_cell(target: Target, c_d: float, eta: float, beta_p: float = 1e-2,
             options: NewtonOptions | None = None, per_axis: int | None = None
             ) -> tuple[MetricsRow, Reconstruction | None]:
    """Invert one cell; numerical failures give a row flagged as missing."""
    try:
        cell = build_cell(target, c_d, eta, beta_p, per_axis)
        state = newton_solve(cell.problem, options)
        if state.status == "line_search_failed":
            row = MetricsRow(c_d, eta, status=state.status, k_f=float(state.k_f))
            return row, None
        rec = reconstruct(target, state)
        return score(target, rec, c_d, eta), rec
    except (ConvergenceError, ArithmeticError, ValueError) as exc:
        log.warning("cell c_d=%g eta=%g failed: %s", c_d, eta, exc)
        return MetricsRow(c_d, eta, status="failed"), None


# -- reports ---------------------------------------------------------------------

def write_report(rows: list[MetricsRow], path) -> None:
    """Metrics table; missing cells carry ``NA`` in every metric column."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for r in rows:
            w.writerow(r.csv_fields())


def central_slice(values: np.ndarray) -> np.ndarray:
    """2D fields pass through; 3D fields give their middle ``z`` slice."""
    return values if values.ndim == 2 else values[:, :, values.shape[2] // 2]


def write_pgm(path, values: np.ndarray, contour: float | None = None) -> None:
    """8-bit binary PGM of a 2D field with ``[0, 1] -> [0, 255]``.

    Rows run along ``y`` (top row is the largest ``y``) and columns along
    ``x``.  With ``contour`` set, voxels on the boundary of ``{c >= contour}``
    are drawn white.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 2:
        raise ValueError("write_pgm needs a 2D array")
    img = np.rint(np.clip(v, 0.0, 1.0) * 255.0).astype(np.uint8)
    if contour is not None:
        inside = v >= contour
        edge = np.zeros_like(inside)
        for axis in (0, 1):
            for shift in (1, -1):
                edge |= inside & ~np.roll(inside, shift, axis=axis)
        img[edge] = 255
    img = np.ascontiguousarray(img.T[::-1])
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def write_slices(out_dir, target: Target, rec: Reconstruction, c_d: float, eta: float) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    tag = f"cd{c_d:.2f}_eta{eta:.2f}"
    names = []
    for t in range(3):
        for kind, fld in (("target", target.at(t)), ("recon", rec.at(t))):
            name = os.path.join(out_dir, f"{kind}_t{t}_{tag}.pgm")
            write_pgm(name, central_slice(fld.values), c_d)
            names.append(name)
    return names


def _cell_job(args):
    spec, c_d, eta, beta_p, options, slice_dir = args
    target = make_target(spec)
    row, rec = run_cell(target, c_d, eta, beta_p, options)
    if slice_dir is not None and rec is not None:
        write_slices(slice_dir, target, rec, c_d, eta)
    return row


def run_testcase(spec: TestCaseSpec, beta_p: float = 1e-2, *, out_dir=None, jobs: int = 1,
                 options: NewtonOptions | None = None, slices: bool = False) -> list[MetricsRow]:
    """Invert every ``(c_d, eta)`` cell of ``spec`` and optionally write the report.

    Cells are independent and seeded individually, so ``jobs > 1`` (separate
    processes) yields the same rows as a serial run.
    """
    cells = [(c_d, eta) for c_d in spec.c_d_list for eta in spec.eta_list]
    slice_dir = os.path.join(out_dir, "slices") if (out_dir is not None and slices) else None
    if jobs > 1 and len(cells) > 1:
        args = [(spec, c_d, eta, beta_p, options, slice_dir) for c_d, eta in cells]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_cell_job, args))
    else:
        target = make_target(spec)
        rows = []
        for c_d, eta in cells:
            row, rec = run_cell(target, c_d, eta, beta_p, options)
            if slice_dir is not None and rec is not None:
                write_slices(slice_dir, target, rec, c_d, eta)
            rows.append(row)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_report(rows, os.path.join(out_dir, f"case{spec.case_id}_report.csv"))
        with open(os.path.join(out_dir, f"case{spec.case_id}_NOTE.txt"), "w") as fh:
            fh.write(DISCLAIMER + "\n")
    return rows


def spearman_nonnegative(x, y) -> bool:
    """True when the rank correlation of ``y`` with ``x`` is not negative (ties allowed)."""
    from scipy.stats import spearmanr

    if len(x) < 2 or np.ptp(y) == 0:
        return True
    r = spearmanr(x, y).statistic
    return bool(math.isnan(r) or r >= 0)
