"""Strang-split time integration of the reaction-diffusion state equation.

One time step is ``c -> S_D(S_R(S_D(c)))`` with ``S_D`` a half-step of
diffusion and ``S_R`` the exact logistic flow over a full step.  Two
interchangeable diffusion propagators are provided:

* :class:`CrankNicolsonHalfStep` -- Crank-Nicolson in time, solved by
  spectrally preconditioned CG, for the heterogeneous anisotropic
  coefficient;
* :class:`SpectralHalfStep` -- the exact heat semigroup for a constant
  isotropic coefficient, diagonal in Fourier space (used as a cheap surrogate).

Both expose the same small interface (step, tangent, adjoint and their
derivatives with respect to the anisotropy scale ``k_f``) so that the
linearised and adjoint sweeps below are exact discrete derivatives of the
forward sweep, whichever propagator is plugged in.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .field import Grid, ScalarField, SpectralOps, TensorField, TimeGrid, spectral_ops
from .krylov import pcg

FORWARD_CG_TOL = 1e-10
MATVEC_CG_TOL = 1e-8


@dataclass(frozen=True)
class ReactionParams:
    rho: float = 2.0

    def __post_init__(self):
        if not self.rho >= 0:
            raise ValueError("rho must be non-negative")


# exact logistic flow map and its first two derivatives

def logistic_flow(c: np.ndarray, rho: float, dt: float) -> np.ndarray:
    e = np.exp(-rho * dt)
    return c / (c + (1.0 - c) * e)


def logistic_tangent(c: np.ndarray, rho: float, dt: float) -> np.ndarray:
    e = np.exp(-rho * dt)
    return e / (c + (1.0 - c) * e) ** 2


def logistic_curvature(c: np.ndarray, rho: float, dt: float) -> np.ndarray:
    e = np.exp(-rho * dt)
    return -2.0 * e * (1.0 - e) / (c + (1.0 - c) * e) ** 3


def reaction_step(c: ScalarField, rho: float, dt: float) -> ScalarField:
    """Advance ``dc/dt = rho c (1 - c)`` exactly over ``dt``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    return ScalarField(c.grid, logistic_flow(c.values, rho, dt))


class CrankNicolsonHalfStep:
    """Crank-Nicolson diffusion over ``tau``: ``(I - aA) y = (I + aA) x``, ``a = tau/2``.

    ``A = div(K grad .)``.  ``T`` is the derivative of ``K`` with respect to
    ``k_f`` (zero where the anisotropic term is absent).  The linear systems
    are solved by CG preconditioned with the exact Fourier inverse of
    ``I - a kbar Lap`` where ``kbar`` is the mean isotropic part of ``K``.
    """

    def __init__(self, ops: SpectralOps, K: np.ndarray, T: np.ndarray | None, tau: float,
                 cg_tol: float = FORWARD_CG_TOL, max_iters: int = 500):
        self.ops = ops
        self.K = K
        self.T = T
        self.a = 0.5 * tau
        self.cg_tol = cg_tol
        self.max_iters = max_iters
        d = ops.grid.ndim
        kbar = float(np.mean(sum(K[k] for k in _diag_slots(d)))) / d
        self._pre = 1.0 / (1.0 - self.a * kbar * ops.laplacian_symbol)
        self.cg_iterations = 0
        self.solves = 0

    def _lhs(self, x):
        return x - self.a * self.ops.diffusion(x, self.K)

    def _precond(self, r):
        return self.ops.apply_symbol(r, self._pre)

    def solve(self, b: np.ndarray) -> np.ndarray:
        """``(I - aA)^{-1} b``."""
        res = pcg(self._lhs, b, precond=self._precond, x0=self._precond(b),
                  rtol=self.cg_tol, max_iters=self.max_iters)
        self.cg_iterations += res.iterations
        self.solves += 1
        return res.x

    def _AT(self, x):
        return self.ops.diffusion(x, self.T)

    def step(self, x):
        return 2.0 * self.solve(x) - x

    def tangent(self, xt, kt, x, y):
        rhs = 2.0 * xt
        if kt and self.T is not None:
            rhs = rhs + self.a * kt * self._AT(x + y)
        return self.solve(rhs) - xt

    def adjoint(self, lam):
        z = self.solve(lam)
        return 2.0 * z - lam, z

    def dk_dot(self, lam, aux, x, y):
        """``<lam, dy/dk_f>`` (unweighted) for the step ``x -> y``."""
        if self.T is None:
            return 0.0
        return self.a * float(np.vdot(aux, self._AT(x + y)))

    def adjoint_tangent(self, lamt, kt, lam, aux, x, y, xt, yt, second_order):
        rhs = lamt
        if second_order and kt and self.T is not None:
            rhs = rhs + self.a * kt * self._AT(aux)
        zt = self.solve(rhs)
        dk = 0.0
        if self.T is not None:
            dk = self.a * float(np.vdot(zt, self._AT(x + y)))
            if second_order:
                dk += self.a * float(np.vdot(aux, self._AT(xt + yt)))
        return 2.0 * zt - lamt, dk


class SpectralHalfStep:
    """Exact heat propagator ``exp(tau * div(Kbar grad .))`` for a constant coefficient.

    ``Kbar = K0bar + k_f * Tbar`` is a scalar (isotropic) or a constant
    ``(d, d)`` tensor; ``tbar`` is its derivative with respect to ``k_f``.
    """

    def __init__(self, ops: SpectralOps, kbar, tbar, tau: float):
        self.ops = ops
        self.kbar = kbar
        self.tbar = tbar
        self.tau = tau
        self._P = np.exp(tau * _constant_symbol(ops, kbar))
        self._dP = tau * _constant_symbol(ops, tbar)  # d/dk_f of log P
        self._has_k = bool(np.any(np.asarray(tbar) != 0))
        self.cg_iterations = 0
        self.solves = 0

    def step(self, x):
        return self.ops.apply_symbol(x, self._P)

    def tangent(self, xt, kt, x, y):
        out = self.step(xt)
        if kt and self._has_k:
            out = out + kt * self.ops.apply_symbol(y, self._dP)
        return out

    def adjoint(self, lam):
        return self.step(lam), None

    def dk_dot(self, lam, aux, x, y):
        if not self._has_k:
            return 0.0
        return float(np.vdot(lam, self.ops.apply_symbol(y, self._dP)))

    def adjoint_tangent(self, lamt, kt, lam, aux, x, y, xt, yt, second_order):
        out = self.step(lamt)
        if second_order and kt and self._has_k:
            out = out + kt * self.ops.apply_symbol(self.step(lam), self._dP)
        dk = 0.0
        if self._has_k:
            dk = float(np.vdot(lamt, self.ops.apply_symbol(y, self._dP)))
            if second_order:
                dk += float(np.vdot(lam, self.ops.apply_symbol(yt, self._dP)))
        return out, dk


def _constant_symbol(ops: SpectralOps, M) -> np.ndarray:
    """Symbol of ``div(M grad .)`` for a constant scalar or ``(d, d)`` tensor ``M``."""
    M = np.asarray(M, dtype=float)
    if M.ndim == 0:
        return float(M) * ops.laplacian_symbol
    ik = ops.wavenumbers
    return sum(M[a, b] * (ik[a] * ik[b]).real for a in range(len(ik)) for b in range(len(ik)))


def _diag_slots(d: int) -> list[int]:
    return [0, 2] if d == 2 else [0, 3, 5]


@dataclass(eq=False)
class Trajectory:
    """States ``c^n`` at every step plus the post-first-half-diffusion intermediates."""

    grid: Grid
    time_grid: TimeGrid
    states: np.ndarray  # (n_steps + 1, *dims)
    halves: np.ndarray  # (n_steps, *dims)
    meta: dict = field(default_factory=dict)

    @property
    def initial(self) -> ScalarField:
        return ScalarField(self.grid, self.states[0])

    @property
    def final(self) -> ScalarField:
        return ScalarField(self.grid, self.states[-1])

    def at(self, n: int) -> ScalarField:
        return ScalarField(self.grid, self.states[n])

    def __len__(self) -> int:
        return self.states.shape[0]


class SplitStepper:
    """Strang splitting ``S_D^{dt/2} S_R^{dt} S_D^{dt/2}`` with a pluggable diffusion half-step."""

    def __init__(self, grid: Grid, halfstep, rho: float, time_grid: TimeGrid):
        self.grid = grid
        self.half = halfstep
        self.rho = float(rho)
        self.time_grid = time_grid
        self.dt = time_grid.dt

    def R(self, c):
        return logistic_flow(c, self.rho, self.dt)

    def dR(self, c):
        return logistic_tangent(c, self.rho, self.dt)

    def d2R(self, c):
        return logistic_curvature(c, self.rho, self.dt)

    def forward(self, c0: np.ndarray, n_steps: int | None = None) -> Trajectory:
        n_steps = self.time_grid.n_steps if n_steps is None else n_steps
        states = np.empty((n_steps + 1, *self.grid.dims))
        halves = np.empty((n_steps, *self.grid.dims))
        states[0] = c0
        for n in range(n_steps):
            halves[n] = self.half.step(states[n])
            states[n + 1] = self.half.step(self.R(halves[n]))
        tg = TimeGrid(n_steps, self.dt * n_steps)
        return Trajectory(self.grid, tg, states, halves)

    def tangent(self, traj: Trajectory, ct0: np.ndarray, kt: float = 0.0) -> Trajectory:
        """Exact derivative of :meth:`forward` along ``(ct0, kt)``."""
        n_steps = traj.time_grid.n_steps
        states = np.empty_like(traj.states)
        halves = np.empty_like(traj.halves)
        states[0] = ct0
        for n in range(n_steps):
            c, ch = traj.states[n], traj.halves[n]
            halves[n] = self.half.tangent(states[n], kt, c, ch)
            rt = self.dR(ch) * halves[n]
            states[n + 1] = self.half.tangent(rt, kt, self.R(ch), traj.states[n + 1])
        return Trajectory(self.grid, traj.time_grid, states, halves)


def make_halfstep(grid: Grid, K: TensorField, T: TensorField | None, dt: float,
                  cg_tol: float = FORWARD_CG_TOL, max_iters: int = 500) -> CrankNicolsonHalfStep:
    ops = spectral_ops(grid)
    return CrankNicolsonHalfStep(ops, K.values, None if T is None else T.values, 0.5 * dt, cg_tol, max_iters)


def diffusion_halfstep(c: ScalarField, K: TensorField, dt: float, cg_tol: float = FORWARD_CG_TOL,
                       max_iters: int = 500) -> ScalarField:
    """One Crank-Nicolson diffusion sub-step over ``dt/2``.

    Solves ``(I - dt/4 D) c' = (I + dt/4 D) c`` with ``D = div(K grad .)``.
    Raises :class:`~glioinv.krylov.ConvergenceError` if CG stalls.
    """
    if c.grid != K.grid:
        raise ValueError("grid mismatch between field and tensor")
    if not dt > 0:
        raise ValueError("dt must be positive")
    half = make_halfstep(c.grid, K, None, dt, cg_tol, max_iters)
    return ScalarField(c.grid, half.step(c.values))


def forward_solve(c0: ScalarField, K: TensorField, rho: float, tg: TimeGrid,
                  cg_tol: float = FORWARD_CG_TOL) -> Trajectory:
    """Integrate the reaction-diffusion equation from ``c0`` over ``tg``."""
    if c0.grid != K.grid:
        raise ValueError("grid mismatch between initial condition and tensor")
    v = c0.values
    if v.min() < -1e-9 or v.max() > 1 + 1e-9:
        raise ValueError(f"initial condition outside [0, 1]: range [{v.min():.3g}, {v.max():.3g}]")
    stepper = SplitStepper(c0.grid, make_halfstep(c0.grid, K, None, tg.dt, cg_tol), rho, tg)
    return stepper.forward(v)


def linearized_forward(c_traj: Trajectory, dp_field: ScalarField, dkf: float, K: TensorField,
                       T: TensorField, rho: float, tg: TimeGrid,
                       cg_tol: float = MATVEC_CG_TOL) -> Trajectory:
    """Tangent trajectory for an initial perturbation ``dp_field`` and ``k_f`` perturbation ``dkf``.

    ``K`` is the coefficient at the linearisation point and ``T`` its
    derivative with respect to ``k_f`` (the brain-restricted anisotropic tensor).
    """
    if c_traj.grid != dp_field.grid or c_traj.grid != K.grid:
        raise ValueError("grid mismatch between trajectory and inputs")
    if c_traj.time_grid != tg:
        raise ValueError("trajectory time grid does not match")
    stepper = SplitStepper(K.grid, make_halfstep(K.grid, K, T, tg.dt, cg_tol), rho, tg)
    return stepper.tangent(c_traj, dp_field.values, dkf)


def export_trajectory(traj: Trajectory, out_dir: str | os.PathLike, prefix: str = "c") -> list[str]:
    """Write every state as ``<prefix>_NNN.glf`` plus a ``manifest.txt`` of step times."""
    from .volume_io import save_volume

    os.makedirs(out_dir, exist_ok=True)
    names = []
    lines = []
    for n, t in enumerate(traj.time_grid.times):
        name = f"{prefix}_{n:03d}.glf"
        save_volume(os.path.join(out_dir, name), traj.at(n))
        names.append(name)
        lines.append(f"{n} {t:.17g} {name}")
    with open(os.path.join(out_dir, "manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return names
