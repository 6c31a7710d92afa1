"""Reduced-space objective, gradient and Hessian actions for ``(p, k_f)``."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..adjoint import AdjointTrajectory, HessianMode, adjoint_sweep, incremental_sweep
from ..anatomy import DiffusionParams, TissueMap, split_K
from ..field import ScalarField, TensorField, TimeGrid, spectral_ops
from ..forward import (FORWARD_CG_TOL, MATVEC_CG_TOL, CrankNicolsonHalfStep, SpectralHalfStep,
                       SplitStepper, Trajectory)
from ..observation import ObservationMask
from .basis import GaussianBasis


@dataclass(eq=False)
class InverseProblem:
    """Data, observation masks, anatomy and model settings of one inversion.

    ``T`` is the anisotropy tensor of the chosen tensor model (before brain
    restriction).  When ``invert_kf`` is false, ``params.k_f`` is held fixed.
    """

    d0: ScalarField
    d1: ScalarField
    mask0: ObservationMask
    mask1: ObservationMask
    basis: GaussianBasis
    tissue: TissueMap
    T: TensorField
    params: DiffusionParams = field(default_factory=DiffusionParams)
    rho: float = 2.0
    time_grid: TimeGrid = field(default_factory=TimeGrid)
    beta_p: float = 1e-2
    invert_kf: bool = True

    def __post_init__(self):
        grid = self.d0.grid
        for name in ("d1", "mask0", "mask1", "basis", "tissue", "T"):
            if getattr(self, name).grid != grid:
                raise ValueError(f"{name} lives on a different grid")
        if not self.beta_p >= 0:
            raise ValueError("beta_p must be non-negative")
        if self.rho < 0:
            raise ValueError("rho must be non-negative")

    @property
    def grid(self):
        return self.d0.grid


@dataclass(eq=False)
class Point:
    """Forward solution (and lazily the adjoint) at one ``(p, k_f)``."""

    p: np.ndarray
    k_f: float
    traj: Trajectory
    objective: float
    misfit0: float
    misfit1: float
    adj: AdjointTrajectory | None = None
    g_p: np.ndarray | None = None
    g_k: float = 0.0

    @property
    def gradient(self) -> np.ndarray:
        """Stacked gradient ``[g_p, g_k]``."""
        return np.append(self.g_p, self.g_k)


class ReducedModel:
    """Objective, gradient and Hessian matvecs of the reduced problem.

    ``surrogate=True`` swaps every diffusion solve for the exact spectral
    propagator of a constant coefficient; everything else (basis,
    observations, reaction) is kept.  The coefficient is the mean of ``K``
    over ``surrogate_region``: ``"tumor"`` (observed voxels of either
    snapshot, or the whole brain if none are observed) or ``"brain"``.
    ``surrogate_tensor`` keeps the full mean tensor; otherwise only its
    isotropic part ``trace / d`` is used.
    """

    def __init__(self, problem: InverseProblem, *, surrogate: bool = False,
                 hessian: HessianMode | str = HessianMode.GAUSS_NEWTON,
                 cg_tol: float = FORWARD_CG_TOL, matvec_cg_tol: float = MATVEC_CG_TOL,
                 surrogate_region: str = "tumor", surrogate_tensor: bool = True):
        self.problem = problem
        self.surrogate = surrogate
        self.hessian = HessianMode(hessian)
        self.cg_tol = cg_tol
        self.matvec_cg_tol = matvec_cg_tol
        grid = problem.grid
        self.grid = grid
        self.w = grid.cell_volume
        self.ops = spectral_ops(grid)
        K0, TB = split_K(problem.tissue, problem.T, problem.params)
        self.K0 = K0.values
        self._TB_all = TB.values
        self.TB = TB.values if problem.invert_kf else None
        region = problem.tissue.brain
        if surrogate_region == "tumor":
            seen = region & (problem.mask0.mask | problem.mask1.mask)
            if seen.any():
                region = seen
        elif surrogate_region != "brain":
            raise ValueError(f"unknown surrogate region {surrogate_region!r}")
        if surrogate_tensor:
            self.k0bar = K0.matrices()[region].mean(axis=0)
            self.tbar = TB.matrices()[region].mean(axis=0)
        else:
            d = grid.ndim
            self.k0bar = float(np.mean(K0.trace()[region])) / d
            self.tbar = float(np.mean(TB.trace()[region])) / d
        self._steppers: dict = {}
        self.pde_solves = 0
        self.hessian_matvecs = 0

    # -- propagators ---------------------------------------------------------
    def stepper(self, k_f: float, matvec: bool = False) -> SplitStepper:
        key = (float(k_f), matvec)
        st = self._steppers.get(key)
        if st is None:
            pb = self.problem
            tau = 0.5 * pb.time_grid.dt
            if self.surrogate:
                tbar = self.tbar if pb.invert_kf else 0.0 * self.tbar
                half = SpectralHalfStep(self.ops, self.k0bar + k_f * self.tbar, tbar, tau)
            else:
                K = self.K0 + k_f * self._TB_all
                half = CrankNicolsonHalfStep(self.ops, K, self.TB, tau,
                                             self.matvec_cg_tol if matvec else self.cg_tol)
            st = SplitStepper(self.grid, half, pb.rho, pb.time_grid)
            if len(self._steppers) > 8:
                self._steppers.clear()
            self._steppers[key] = st
        return st

    def fixed_kf(self) -> float:
        return self.problem.params.k_f

    def cg_iterations(self) -> int:
        return sum(st.half.cg_iterations for st in self._steppers.values())

    # -- objective and gradient ----------------------------------------------
    def evaluate(self, p: np.ndarray, k_f: float | None = None) -> Point:
        pb = self.problem
        p = np.asarray(p, dtype=float)
        k_f = self.fixed_kf() if (k_f is None or not pb.invert_kf) else float(k_f)
        c0 = pb.basis.apply(p)
        traj = self.stepper(k_f).forward(c0)
        self.pde_solves += 1
        r0 = pb.mask0.apply(c0 - pb.d0.values)
        r1 = pb.mask1.apply(traj.states[-1] - pb.d1.values)
        m0 = 0.5 * self.w * float(np.vdot(r0, r0))
        m1 = 0.5 * self.w * float(np.vdot(r1, r1))
        J = m0 + m1 + 0.5 * pb.beta_p * float(p @ p)
        return Point(p, k_f, traj, J, m0, m1)

    def objective(self, p, k_f=None) -> float:
        return self.evaluate(p, k_f).objective

    def gradient(self, pt: Point) -> Point:
        """Fill in the adjoint and gradient of ``pt`` (in place) and return it."""
        if pt.g_p is not None:
            return pt
        pb = self.problem
        c1 = pt.traj.states[-1]
        terminal = -pb.mask1.apply(pb.mask1.apply(c1) - pb.d1.values)
        pt.adj = adjoint_sweep(self.stepper(pt.k_f), pt.traj, terminal)
        self.pde_solves += 1
        c0 = pt.traj.states[0]
        pt.g_p = (pb.beta_p * pt.p + pb.basis.apply_transpose(pb.mask0.apply(c0 - pb.d0.values))
                  - pb.basis.apply_transpose(pt.adj.states[0]))
        pt.g_k = -self.w * pt.adj.dk if pb.invert_kf else 0.0
        return pt

    # -- Hessian ---------------------------------------------------------------
    def B(self, pt_: np.ndarray) -> np.ndarray:
        """Tikhonov plus observed-mass term ``beta p + Phi^T O_0 Phi p``."""
        pb = self.problem
        return pb.beta_p * pt_ + pb.basis.apply_transpose(pb.mask0.apply(pb.basis.apply(pt_)))

    def hessvec(self, pt: Point, p_dir: np.ndarray, k_dir: float = 0.0,
                mode: HessianMode | str | None = None) -> tuple[np.ndarray, float]:
        """``(H_pp p~ + H_pk k~, H_kp p~ + H_kk k~)`` at ``pt``.

        One tangent sweep from ``Phi p~`` (with the ``k~`` source) followed by
        one incremental adjoint sweep from ``-O_1 c~_1``.
        """
        pb = self.problem
        mode = self.hessian if mode is None else HessianMode(mode)
        if not pb.invert_kf:
            k_dir = 0.0
        self.gradient(pt)
        p_dir = np.asarray(p_dir, dtype=float)
        st = self.stepper(pt.k_f, matvec=True)
        tan = st.tangent(pt.traj, pb.basis.apply(p_dir), k_dir)
        terminal = -pb.mask1.apply(tan.states[-1])
        inc = incremental_sweep(st, pt.traj, pt.adj, tan, terminal, k_dir, mode)
        self.pde_solves += 2
        self.hessian_matvecs += 1
        hp = self.B(p_dir) - pb.basis.apply_transpose(inc.states[0])
        hk = -self.w * inc.dk if pb.invert_kf else 0.0
        return hp, hk

    def hess_matvec_pp(self, pt: Point, p_dir) -> np.ndarray:
        return self.hessvec(pt, p_dir, 0.0)[0]

    def hess_matvec_pk(self, pt: Point, k_dir: float) -> np.ndarray:
        return self.hessvec(pt, np.zeros(self.problem.basis.n_p), k_dir)[0]

    def hess_matvec_kp(self, pt: Point, p_dir) -> float:
        return self.hessvec(pt, p_dir, 0.0)[1]

    def hess_matvec_kk(self, pt: Point, k_dir: float) -> float:
        return self.hessvec(pt, np.zeros(self.problem.basis.n_p), k_dir)[1]

    def dense_gn_hessian_pp(self, pt: Point) -> np.ndarray:
        """Assemble the Gauss-Newton ``H_pp`` column by column via tangent sweeps only."""
        pb = self.problem
        st = self.stepper(pt.k_f, matvec=True)
        n_p = pb.basis.n_p
        outs = []
        for j in range(n_p):
            tan = st.tangent(pt.traj, pb.basis.matrix[:, j].reshape(self.grid.dims), 0.0)
            outs.append(pb.mask1.apply(tan.states[-1]).ravel())
        F = np.stack(outs, axis=1)
        H = self.w * (F.T @ F)
        for j in range(n_p):
            e = np.zeros(n_p)
            e[j] = 1.0
            H[:, j] += self.B(e)
        return 0.5 * (H + H.T)
