"""Reduced-space Newton inversion for the initial tumor and the anisotropic rate."""

from .basis import GaussianBasis, basis_apply, basis_apply_transpose, lattice_basis, place_basis
from .lcurve import LCurve, LCurvePoint, lcurve, lcurve_corner, menger_curvature
from .newton import (InversionState, IterationRecord, LineSearchError, NewtonOptions, Preconditioner,
                     SchurResult, SingularCouplingError, newton_solve, precond_apply, schur_solve)
from .reduced import InverseProblem, Point, ReducedModel

__all__ = [
    "GaussianBasis", "basis_apply", "basis_apply_transpose", "lattice_basis", "place_basis",
    "LCurve", "LCurvePoint", "lcurve", "lcurve_corner", "menger_curvature",
    "InversionState", "IterationRecord", "LineSearchError", "NewtonOptions", "Preconditioner",
    "SchurResult", "SingularCouplingError", "newton_solve", "precond_apply", "schur_solve",
    "InverseProblem", "Point", "ReducedModel",
]
