import warnings

import numpy as np
import pytest

from glioinv.anatomy import AnatomySpec, DiffusionParams, build_T, synth_anatomy
from glioinv.experiments import gaussian_foci, Focus
from glioinv.field import Grid, ScalarField, TimeGrid
from glioinv.forward import forward_solve
from glioinv.anatomy import assemble_K
from glioinv.inversion.basis import lattice_basis
from glioinv.inversion.reduced import InverseProblem
from glioinv.observation import threshold_mask

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def small_problem(n=32, c_d=0.2, invert_kf=True, beta=1e-2, per_axis=3, rho=2.0, n_steps=5):
    """Single-focus inverse problem on a small grid with a ``per_axis``^2 basis."""
    grid = Grid.cube(n)
    tissue, dti = synth_anatomy(grid, AnatomySpec())
    T = build_T(dti, "full_fa")
    params = DiffusionParams(k_f=0.1)
    tg = TimeGrid(n_steps, 1.0)
    c0 = gaussian_foci(grid, [Focus((0.64, 0.49), 1.0, 0.4)])
    traj = forward_solve(ScalarField(grid, c0), assemble_K(tissue, T, params), rho, tg)
    m0 = threshold_mask(ScalarField(grid, c0), c_d)
    m1 = threshold_mask(traj.final, c_d)
    ctr = np.array([0.64, 0.49]) * 2 * np.pi
    basis = lattice_basis(grid, ctr - 0.5, ctr + 0.5, per_axis)
    return InverseProblem(ScalarField(grid, m0.apply(c0)), ScalarField(grid, m1.apply(traj.final.values)),
                          m0, m1, basis, tissue, T, params, rho, tg, beta, invert_kf)


@pytest.fixture(scope="session")
def problem9():
    return small_problem()


@pytest.fixture(autouse=True)
def _quiet_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        yield
