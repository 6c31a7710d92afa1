"""L-curve sweep over the Tikhonov weight and corner selection."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass

import numpy as np

from ..krylov import ConvergenceError
from .newton import NewtonOptions, newton_solve
from .reduced import InverseProblem

log = logging.getLogger(__name__)


@dataclass
class LCurvePoint:
    beta: float
    misfit: float  # sqrt(||O0 Phi p - d0||^2 + ||O1 c1 - d1||^2)
    p_norm: float
    status: str
    k_f: float = float("nan")

    @property
    def valid(self) -> bool:
        return self.status in ("converged", "max_iterations") and np.isfinite(self.misfit)


@dataclass
class LCurve:
    points: list[LCurvePoint]
    corner: float | None
    curvature: np.ndarray

    def valid_points(self) -> list[LCurvePoint]:
        return [q for q in self.points if q.valid]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["beta", "misfit", "p_norm", "k_f", "status", "curvature", "corner"])
            kappa = dict(zip([q.beta for q in self.valid_points()], self.curvature))
            for q in self.points:
                w.writerow([f"{q.beta:.6e}", f"{q.misfit:.10e}", f"{q.p_norm:.10e}", f"{q.k_f:.6e}",
                            q.status, f"{kappa.get(q.beta, float('nan')):.6e}",
                            int(self.corner is not None and q.beta == self.corner)])


def menger_curvature(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Signed curvature of the circle through each interior triple of points.

    Endpoints get ``nan``.  Positive values mean a counter-clockwise turn,
    which is the corner orientation of an L-curve traversed in increasing
    ``beta`` (``x`` = log misfit, ``y`` = log norm).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = np.full(x.size, np.nan)
    for i in range(1, x.size - 1):
        ax, ay = x[i] - x[i - 1], y[i] - y[i - 1]
        bx, by = x[i + 1] - x[i], y[i + 1] - y[i]
        cross = ax * by - ay * bx
        la, lb = math.hypot(ax, ay), math.hypot(bx, by)
        lc = math.hypot(x[i + 1] - x[i - 1], y[i + 1] - y[i - 1])
        denom = la * lb * lc
        out[i] = 2.0 * cross / denom if denom > 0 else 0.0
    return out


def lcurve_corner(points: list[LCurvePoint]) -> tuple[float | None, np.ndarray]:
    """Beta at the point of maximum positive curvature, or ``None`` if there is no bend."""
    pts = sorted((q for q in points if q.valid), key=lambda q: q.beta)
    if len(pts) < 3:
        raise ValueError("L-curve corner needs at least 3 valid points")
    x = np.log10([max(q.misfit, 1e-300) for q in pts])
    y = np.log10([max(q.p_norm, 1e-300) for q in pts])
    kappa = menger_curvature(x, y)
    inner = np.where(np.isfinite(kappa), kappa, -np.inf)
    i = int(np.argmax(inner))
    return (pts[i].beta if inner[i] > 0 else None), kappa


def lcurve(problem: InverseProblem, betas, options: NewtonOptions | None = None) -> LCurve:
    """Solve the inversion for every ``beta`` and locate the L-curve corner.

    A failed solve is kept as a point with status ``"failed"`` and left out of
    the corner search.
    """
    betas = sorted(float(b) for b in betas)
    if len(betas) < 4:
        raise ValueError("L-curve needs at least 4 beta values")
    if any(b <= 0 for b in betas):
        raise ValueError("beta values must be positive")
    points = []
    for b in betas:
        pb = dataclasses.replace(problem, beta_p=b)
        try:
            st = newton_solve(pb, options)
        except (ConvergenceError, ArithmeticError) as exc:
            log.warning("L-curve solve failed at beta=%g: %s", b, exc)
            points.append(LCurvePoint(b, float("nan"), float("nan"), "failed"))
            continue
        pt = st.point
        misfit = math.sqrt(2.0 * (pt.misfit0 + pt.misfit1))
        points.append(LCurvePoint(b, misfit, float(np.linalg.norm(st.p)), st.status, st.k_f))
    valid = [q for q in points if q.valid]
    if len(valid) < 3:
        raise ValueError(f"only {len(valid)} L-curve solves succeeded; need 3 for a corner")
    corner, kappa = lcurve_corner(points)
    return LCurve(points, corner, kappa)
