"""Preconditioned conjugate gradients on flat or gridded numpy arrays."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class ConvergenceError(RuntimeError):
    """An iterative solve stopped before reaching its tolerance."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (relative residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual: float
    converged: bool
    negative_curvature: bool = False


def pcg(
    apply_A: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    *,
    precond: Callable[[np.ndarray], np.ndarray] | None = None,
    x0: np.ndarray | None = None,
    rtol: float = 1e-10,
    max_iters: int = 500,
    inner: Callable[[np.ndarray, np.ndarray], float] | None = None,
    raise_on_fail: bool = True,
    stop_on_negative_curvature: bool = False,
) -> CGResult:
    """Solve ``A x = b`` for symmetric ``A`` by (preconditioned) CG.

    Convergence is declared when ``||b - A x|| <= rtol * ||b||``.  With
    ``stop_on_negative_curvature`` the iteration returns the last iterate
    (or ``b`` itself on the first step) instead of proceeding along a
    direction of non-positive curvature, as in truncated Newton-CG.
    """
    dot = inner or (lambda u, v: float(np.vdot(u, v).real))
    M = precond or (lambda r: r)
    bnorm = np.sqrt(dot(b, b))
    if bnorm == 0.0:
        return CGResult(np.zeros_like(b), 0, 0.0, True)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - apply_A(x) if x0 is not None else b.copy()
    z = M(r)
    p = z.copy()
    rz = dot(r, z)
    res = np.sqrt(dot(r, r)) / bnorm
    it = 0
    while res > rtol and it < max_iters:
        Ap = apply_A(p)
        pAp = dot(p, Ap)
        if pAp <= 0.0:
            if stop_on_negative_curvature:
                if it == 0:
                    x = b.copy()
                return CGResult(x, it, res, False, negative_curvature=True)
            raise ConvergenceError("CG breakdown: non-positive curvature", res, it)
        step = rz / pAp
        x = x + step * p
        r = r - step * Ap
        it += 1
        res = np.sqrt(dot(r, r)) / bnorm
        if res <= rtol:
            break
        z = M(r)
        rz_new = dot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    converged = res <= rtol
    if not converged and raise_on_fail:
        raise ConvergenceError("CG did not converge", res, it)
    return CGResult(x, it, res, converged)
