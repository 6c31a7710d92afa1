"""Parameter estimation for an anisotropic reaction-diffusion glioma model.

Forward model, discrete adjoints, reduced-space Newton inversion of the
initial tumor and the anisotropic diffusion rate, and synthetic experiments.
"""

from .adjoint import HessianMode, adjoint_solve, incremental_adjoint
from .anatomy import (AnatomySpec, DiffusionParams, TensorMode, TissueMap, assemble_K, build_T,
                      build_tensor_full, build_tensor_principal, fractional_anisotropy, synth_anatomy)
from .field import (Grid, ScalarField, TensorField, TimeGrid, VectorField, apply_diffusion,
                    spectral_divergence, spectral_gradient)
from .forward import (ReactionParams, Trajectory, diffusion_halfstep, export_trajectory, forward_solve,
                      linearized_forward, reaction_step)
from .inversion import (GaussianBasis, InverseProblem, InversionState, NewtonOptions, lcurve,
                        newton_solve, place_basis, schur_solve)
from .krylov import ConvergenceError
from .observation import ObservationMask, observe, threshold_mask
from .volume_io import VolumeFormatError, load_volume, save_volume

__all__ = [
    "HessianMode", "adjoint_solve", "incremental_adjoint", "AnatomySpec", "DiffusionParams",
    "TensorMode", "TissueMap", "assemble_K", "build_T", "build_tensor_full",
    "build_tensor_principal", "fractional_anisotropy", "synth_anatomy", "Grid", "ScalarField",
    "TensorField", "TimeGrid", "VectorField", "apply_diffusion", "spectral_divergence",
    "spectral_gradient", "ReactionParams", "Trajectory", "diffusion_halfstep", "export_trajectory",
    "forward_solve", "linearized_forward", "reaction_step", "GaussianBasis", "InverseProblem",
    "InversionState", "NewtonOptions", "lcurve", "newton_solve", "place_basis", "schur_solve",
    "ConvergenceError", "ObservationMask", "observe", "threshold_mask", "VolumeFormatError",
    "load_volume", "save_volume",
]

__version__ = "0.1.0"
