"""Reduced-space Newton-CG: Schur-complement step, preconditioner, warm start, line search."""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from ..adjoint import HessianMode
from ..forward import FORWARD_CG_TOL, MATVEC_CG_TOL
from ..krylov import ConvergenceError, pcg
from .reduced import InverseProblem, Point, ReducedModel

log = logging.getLogger(__name__)


class SingularCouplingError(ArithmeticError):
    """``H_kk`` vanished, so the ``k_f`` block cannot be eliminated."""


class LineSearchError(RuntimeError):
    pass


class Preconditioner:
    """Inverse of the constant-coefficient surrogate ``H_pp``, assembled densely and factorised."""

    def __init__(self, H_bar: np.ndarray):
        self.H_bar = H_bar
        try:
            self._factor = cho_factor(H_bar)
            self.identity = False
        except LinAlgError:
            warnings.warn("surrogate Hessian is not SPD; falling back to identity preconditioner")
            self._factor = None
            self.identity = True

    @classmethod
    def from_surrogate(cls, surrogate: ReducedModel, p: np.ndarray, k_f: float,
                       traj_point: Point | None = None) -> "Preconditioner":
        """Assemble ``H_bar_pp`` at ``(p, k_f)``.

        With ``traj_point`` the reaction tangents are taken from that point's
        trajectory (the true one during phase 2) instead of a surrogate solve.
        """
        pt = traj_point if traj_point is not None else surrogate.evaluate(p, k_f)
        return cls(surrogate.dense_gn_hessian_pp(pt))

    def __call__(self, r: np.ndarray) -> np.ndarray:
        if self._factor is None:
            return np.array(r, dtype=float)
        return cho_solve(self._factor, r)


def precond_apply(precond: Preconditioner, r: np.ndarray) -> np.ndarray:
    return precond(r)


@dataclass
class SchurResult:
    p_step: np.ndarray
    k_step: float
    cg_iterations: int
    cg_residual: float
    h_kk: float = 0.0
    h_pk: np.ndarray | None = None
    negative_curvature: bool = False
    kf_frozen: bool = False


def schur_solve(model: ReducedModel, pt: Point, precond=None, *, rtol: float = 1e-6,
                max_iters: int = 100, freeze_kf: bool = False) -> SchurResult:
    """Newton step from the Schur complement of the ``(p, k_f)`` block system.

    Solves ``(H_pp - H_pk H_kk^{-1} H_kp) p~ = H_pk H_kk^{-1} g_k - g_p`` by
    CG, then ``k~ = -H_kk^{-1} (H_kp p~ + g_k)``.  ``H_kk`` is a scalar, so
    ``H_pk`` and ``H_kk`` come from a single matvec with ``(0, 1)`` and each
    Schur application costs one tangent/incremental-adjoint pair.
    ``freeze_kf`` solves ``H_pp p~ = -g_p`` with ``k~ = 0``.
    """
    model.gradient(pt)
    g_p, g_k = pt.g_p, pt.g_k
    n_p = g_p.size
    invert_kf = model.problem.invert_kf
    h_pk = np.zeros(n_p)
    h_kk = 0.0
    frozen = freeze_kf or not invert_kf
    if not frozen:
        h_pk, h_kk = model.hessvec(pt, np.zeros(n_p), 1.0)
        if abs(h_kk) < 1e-14:
            warnings.warn("H_kk is numerically zero; solving with k_f frozen")
            frozen = True

    if frozen:
        def apply_S(x):
            return model.hessvec(pt, x, 0.0)[0]
        rhs = -g_p
    else:
        def apply_S(x):
            hp, hk = model.hessvec(pt, x, 0.0)
            return hp - h_pk * (hk / h_kk)
        rhs = h_pk * (g_k / h_kk) - g_p

    negative_ok = model.hessian is HessianMode.FULL
    res = pcg(apply_S, rhs, precond=precond, rtol=rtol, max_iters=max_iters,
              raise_on_fail=False, stop_on_negative_curvature=negative_ok)
    p_step = res.x
    k_step = 0.0 if frozen else -(float(h_pk @ p_step) + g_k) / h_kk
    return SchurResult(p_step, k_step, res.iterations, res.residual, h_kk, h_pk,
                       res.negative_curvature, frozen)


@dataclass
class NewtonOptions:
    hessian: HessianMode = HessianMode.GAUSS_NEWTON
    max_newton: int = 25
    grad_rtol: float = 1e-6
    cg_rtol: float = 1e-6
    cg_max_iters: int = 100
    armijo_c1: float = 1e-4
    max_halvings: int = 20
    precondition: bool = True
    warm_start: bool = True
    warm_rtol: float = 1e-3
    warm_max_iters: int = 10
    k_f_init: float = 0.0
    cg_tol: float = FORWARD_CG_TOL
    matvec_cg_tol: float = MATVEC_CG_TOL
    surrogate_region: str = "tumor"
    surrogate_tensor: bool = True

    def __post_init__(self):
        self.hessian = HessianMode(self.hessian)


@dataclass
class IterationRecord:
    iter: int
    phase: str
    objective: float
    grad_norm: float
    cg_iters: int
    step_length: float
    k_f: float


@dataclass
class InversionState:
    p: np.ndarray
    k_f: float
    history: list[IterationRecord] = field(default_factory=list)
    status: str = "running"
    converged: bool = False
    warm_iterations: int = 0
    newton_iterations: int = 0
    grad_norm0: float = float("nan")
    point: Point | None = None

    @property
    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.history])

    def phase_records(self, phase: str) -> list[IterationRecord]:
        return [r for r in self.history if r.phase == phase and r.cg_iters >= 0]

    def mean_cg_iterations(self, phase: str = "newton") -> float:
        its = [r.cg_iters for r in self.history if r.phase == phase and r.step_length > 0]
        return float(np.mean(its)) if its else float("nan")

    def write_csv(self, path) -> None:
        """Convergence log with columns iter, phase, objective, grad_norm, cg_iters, step_length, k_f."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "phase", "objective", "grad_norm", "cg_iters", "step_length", "k_f"])
            for r in self.history:
                w.writerow([r.iter, r.phase, f"{r.objective:.10e}", f"{r.grad_norm:.10e}",
                            r.cg_iters, f"{r.step_length:.6e}", f"{r.k_f:.10e}"])


def _line_search(model: ReducedModel, pt: Point, p_step, k_step, opts: NewtonOptions):
    """Armijo backtracking by halving; ``k_f`` is projected onto ``k_f >= 0``.

    Sufficient decrease is measured along the projected displacement, so a
    step that pushes ``k_f`` below zero still makes progress in ``p``.
    """
    g = pt.gradient
    if not float(g @ np.append(p_step, k_step)) < 0:
        log.debug("Newton direction is not a descent direction; using steepest descent")
        p_step, k_step = -pt.g_p, -pt.g_k
    project = model.problem.invert_kf
    s = 1.0
    for _ in range(opts.max_halvings + 1):
        k_new = pt.k_f + s * k_step
        if project:
            k_new = max(k_new, 0.0)
        disp = np.append(s * p_step, k_new - pt.k_f)
        slope = float(g @ disp)
        if slope < 0:
            trial = model.evaluate(pt.p + s * p_step, k_new)
            if trial.objective <= pt.objective + opts.armijo_c1 * slope and trial.objective < pt.objective:
                return trial, s
        s *= 0.5
    raise LineSearchError("no sufficient decrease after "
                          f"{opts.max_halvings} step halvings")


def _projected_gradient(model: ReducedModel, pt: Point) -> tuple[np.ndarray, bool]:
    """Gradient with ``g_k`` dropped when ``k_f = 0`` is an active bound."""
    g = pt.gradient
    active = model.problem.invert_kf and pt.k_f <= 0.0 and pt.g_k > 0.0
    if active:
        g = g.copy()
        g[-1] = 0.0
    return g, active


def _newton_loop(model: ReducedModel, state: InversionState, pt: Point, opts: NewtonOptions,
                 phase: str, max_iters: int, gtol: float, precond_model: ReducedModel | None):
    """Run Newton iterations in-place on ``state``; returns the final point."""
    for it in range(max_iters + 1):
        model.gradient(pt)
        g, active = _projected_gradient(model, pt)
        gnorm = float(np.linalg.norm(g))
        if gnorm <= gtol:
            state.history.append(IterationRecord(it, phase, pt.objective, gnorm, 0, 0.0, pt.k_f))
            return pt, True
        if it == max_iters:
            state.history.append(IterationRecord(it, phase, pt.objective, gnorm, 0, 0.0, pt.k_f))
            return pt, False
        precond = None
        if precond_model is not None:
            precond = Preconditioner.from_surrogate(precond_model, pt.p, pt.k_f, pt)
        step = schur_solve(model, pt, precond, rtol=opts.cg_rtol, max_iters=opts.cg_max_iters,
                           freeze_kf=active)
        try:
            new, s = _line_search(model, pt, step.p_step, step.k_step, opts)
        except LineSearchError:
            state.history.append(IterationRecord(it, phase, pt.objective, gnorm, step.cg_iterations, 0.0, pt.k_f))
            raise
        state.history.append(IterationRecord(it, phase, pt.objective, gnorm, step.cg_iterations, s, pt.k_f))
        if phase == "newton":
            state.newton_iterations += 1
        else:
            state.warm_iterations += 1
        pt = new
        state.p, state.k_f = pt.p, pt.k_f
    return pt, False


def newton_solve(problem: InverseProblem, options: NewtonOptions | None = None, *,
                 p0: np.ndarray | None = None) -> InversionState:
    """Reconstruct ``p`` (and ``k_f`` if inverted) by reduced-space Newton-CG.

    Phase 1 (optional warm start) runs the whole Newton loop on the
    constant-coefficient surrogate until its gradient falls by
    ``warm_rtol``.  Phase 2 iterates with the true operators, Armijo
    backtracking, and the surrogate ``H_pp`` as preconditioner, until
    ``||g|| <= grad_rtol * ||g(p0)||``.  Line-search failure ends the run
    with ``status == "line_search_failed"``.
    """
    opts = options or NewtonOptions()
    true_model = ReducedModel(problem, hessian=opts.hessian, cg_tol=opts.cg_tol,
                              matvec_cg_tol=opts.matvec_cg_tol)
    surrogate = ReducedModel(problem, surrogate=True, surrogate_region=opts.surrogate_region,
                             surrogate_tensor=opts.surrogate_tensor)
    n_p = problem.basis.n_p
    p = np.zeros(n_p) if p0 is None else np.asarray(p0, dtype=float)
    k_f = opts.k_f_init if problem.invert_kf else problem.params.k_f
    state = InversionState(p, k_f)

    start = true_model.gradient(true_model.evaluate(p, k_f))
    state.grad_norm0 = float(np.linalg.norm(_projected_gradient(true_model, start)[0]))
    gtol = opts.grad_rtol * state.grad_norm0

    try:
        if opts.warm_start:
            spt = surrogate.gradient(surrogate.evaluate(p, k_f))
            wtol = opts.warm_rtol * float(np.linalg.norm(_projected_gradient(surrogate, spt)[0]))
            spt, _ = _newton_loop(surrogate, state, spt, opts, "warm", opts.warm_max_iters, wtol,
                                  surrogate if opts.precondition else None)
            start = true_model.evaluate(spt.p, spt.k_f)
        pt, ok = _newton_loop(true_model, state, start, opts, "newton", opts.max_newton, gtol,
                              surrogate if opts.precondition else None)
    except LineSearchError as exc:
        log.warning("line search failed: %s", exc)
        state.status = "line_search_failed"
        state.point = true_model.evaluate(state.p, state.k_f)
        return state
    except ConvergenceError as exc:
        raise ConvergenceError(f"PDE solve failed at Newton iteration {state.newton_iterations}: {exc}",
                               exc.residual, exc.iterations) from exc
    state.p, state.k_f, state.point = pt.p, pt.k_f, pt
    state.converged = ok
    state.status = "converged" if ok else "max_iterations"
    return state
