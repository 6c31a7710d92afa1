"""Backward sweeps: adjoint and incremental (second-order) adjoint.

Each backward step is the exact transpose of the linearised forward step,
so the sweeps below differentiate the discrete forward map rather than a
discretisation of the continuous adjoint PDE.  The adjoint variable carries
the sign convention ``alpha_1 = -O^T (O c_1 - d_1)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .field import Grid, ScalarField, TensorField, TimeGrid
from .forward import MATVEC_CG_TOL, FORWARD_CG_TOL, SplitStepper, Trajectory, make_halfstep
from .observation import ObservationMask


class HessianMode(str, enum.Enum):
    GAUSS_NEWTON = "gn"
    FULL = "full"


@dataclass(eq=False)
class AdjointTrajectory:
    """Adjoint states ``alpha^n`` plus the intermediates of each backward step.

    ``halves[n]`` is the adjoint at the output of the first diffusion
    half-step of step ``n``; ``reaction_out[n]`` the adjoint at the reaction
    output; ``aux`` holds propagator-specific data reused by the
    second-order sweep.
    """

    grid: Grid
    time_grid: TimeGrid
    states: np.ndarray
    halves: np.ndarray
    reaction_out: np.ndarray
    aux: list = field(default_factory=list)
    dk: float = 0.0

    @property
    def initial(self) -> ScalarField:
        return ScalarField(self.grid, self.states[0])

    @property
    def final(self) -> ScalarField:
        return ScalarField(self.grid, self.states[-1])


def adjoint_sweep(stepper: SplitStepper, traj: Trajectory, terminal: np.ndarray) -> AdjointTrajectory:
    """Transpose sweep from ``terminal``; ``dk`` accumulates ``sum <alpha, dy/dk_f>`` (unweighted)."""
    half = stepper.half
    n_steps = traj.time_grid.n_steps
    states = np.empty_like(traj.states)
    halves = np.empty_like(traj.halves)
    r_out = np.empty_like(traj.halves)
    aux = [None] * (2 * n_steps)
    states[-1] = terminal
    dk = 0.0
    for n in range(n_steps - 1, -1, -1):
        c, ch, c_next = traj.states[n], traj.halves[n], traj.states[n + 1]
        r = stepper.R(ch)
        lam_r, aux[2 * n + 1] = half.adjoint(states[n + 1])
        dk += half.dk_dot(states[n + 1], aux[2 * n + 1], r, c_next)
        r_out[n] = lam_r
        halves[n] = stepper.dR(ch) * lam_r
        states[n], aux[2 * n] = half.adjoint(halves[n])
        dk += half.dk_dot(halves[n], aux[2 * n], c, ch)
    return AdjointTrajectory(traj.grid, traj.time_grid, states, halves, r_out, aux, dk)


def incremental_sweep(stepper: SplitStepper, traj: Trajectory, adj: AdjointTrajectory,
                      tangent: Trajectory, terminal: np.ndarray, kt: float,
                      mode: HessianMode = HessianMode.GAUSS_NEWTON) -> AdjointTrajectory:
    """Directional derivative of :func:`adjoint_sweep` along a tangent trajectory.

    In ``GAUSS_NEWTON`` mode every term multiplied by the base adjoint is
    dropped, leaving the transpose of the tangent map.
    """
    second = HessianMode(mode) is HessianMode.FULL
    half = stepper.half
    n_steps = traj.time_grid.n_steps
    states = np.empty_like(traj.states)
    halves = np.empty_like(traj.halves)
    r_out = np.empty_like(traj.halves)
    states[-1] = terminal
    dk = 0.0
    for n in range(n_steps - 1, -1, -1):
        c, ch, c_next = traj.states[n], traj.halves[n], traj.states[n + 1]
        ct, cht, ct_next = tangent.states[n], tangent.halves[n], tangent.states[n + 1]
        r = stepper.R(ch)
        rt = stepper.dR(ch) * cht
        lam_rt, d2 = half.adjoint_tangent(states[n + 1], kt, adj.states[n + 1], adj.aux[2 * n + 1],
                                          r, c_next, rt, ct_next, second)
        dk += d2
        r_out[n] = lam_rt
        halves[n] = stepper.dR(ch) * lam_rt
        if second:
            halves[n] = halves[n] + stepper.d2R(ch) * cht * adj.reaction_out[n]
        states[n], d1 = half.adjoint_tangent(halves[n], kt, adj.halves[n], adj.aux[2 * n],
                                             c, ch, ct, cht, second)
        dk += d1
    return AdjointTrajectory(traj.grid, traj.time_grid, states, halves, r_out, [], dk)


def adjoint_solve(c_traj: Trajectory, d1: ScalarField, mask1: ObservationMask, K: TensorField,
                  rho: float, tg: TimeGrid, T: TensorField | None = None,
                  cg_tol: float = FORWARD_CG_TOL) -> AdjointTrajectory:
    """Adjoint trajectory for the terminal misfit ``1/2 ||O_1 c_1 - d_1||^2``.

    If ``T`` is given, ``dk`` of the result holds the weighted sensitivity
    ``sum <alpha, dy/dk_f>`` so that the ``k_f`` gradient is ``-dk``.
    """
    if c_traj.time_grid != tg:
        raise ValueError("trajectory time grid does not match")
    if c_traj.grid != K.grid or d1.grid != K.grid or mask1.grid != K.grid:
        raise ValueError("grid mismatch between trajectory and inputs")
    stepper = SplitStepper(K.grid, make_halfstep(K.grid, K, T, tg.dt, cg_tol), rho, tg)
    terminal = -mask1.apply(mask1.apply(c_traj.states[-1]) - d1.values)
    adj = adjoint_sweep(stepper, c_traj, terminal)
    adj.dk *= K.grid.cell_volume
    return adj


def incremental_adjoint(c_traj: Trajectory, a_traj: AdjointTrajectory, ctilde_traj: Trajectory,
                        dkf: float, K: TensorField, T: TensorField, rho: float, tg: TimeGrid,
                        mask1: ObservationMask, mode: HessianMode = HessianMode.GAUSS_NEWTON,
                        cg_tol: float = MATVEC_CG_TOL) -> AdjointTrajectory:
    """Second-order adjoint from ``alpha~_1 = -O_1^T O_1 c~_1``.

    ``a_traj`` must come from :func:`adjoint_solve` with the same ``K`` and
    ``T``; ``dk`` of the result is the weighted ``k_f`` sensitivity.
    """
    if not (c_traj.time_grid == ctilde_traj.time_grid == a_traj.time_grid == tg):
        raise ValueError("trajectories do not share a time grid")
    stepper = SplitStepper(K.grid, make_halfstep(K.grid, K, T, tg.dt, cg_tol), rho, tg)
    terminal = -mask1.apply(ctilde_traj.states[-1])
    inc = incremental_sweep(stepper, c_traj, a_traj, ctilde_traj, terminal, dkf, mode)
    inc.dk *= K.grid.cell_volume
    return inc
