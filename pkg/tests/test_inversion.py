import dataclasses

import numpy as np
import pytest

from glioinv.anatomy import GREY, DiffusionParams, TissueMap
from glioinv.field import Grid, ScalarField, TensorField, TimeGrid
from glioinv.inversion.basis import GaussianBasis, lattice_basis, place_basis
from glioinv.inversion.lcurve import LCurvePoint, lcurve, lcurve_corner, menger_curvature
from glioinv.inversion.newton import NewtonOptions, Preconditioner, newton_solve, schur_solve
from glioinv.inversion.reduced import InverseProblem, ReducedModel
from glioinv.observation import ObservationMask


def homogeneous_problem(n=16, rho=2.0, per_axis=3, invert_kf=False, T_scale=0.0, beta=1e-2):
    """Uniform grey matter with a centred Gaussian target observed above 0.2."""
    g = Grid.cube(n)
    tissue = TissueMap(g, np.full(g.dims, GREY))
    T = TensorField.isotropic(g, T_scale)
    x, y = g.coords()
    d = ScalarField(g, np.exp(-((x - np.pi) ** 2 + (y - np.pi) ** 2) / 1.0) * np.ones(g.dims))
    m = ObservationMask(g, d.values > 0.2)
    basis = lattice_basis(g, [2.5, 2.5], [3.8, 3.8], per_axis)
    return InverseProblem(d, d, m, m, basis, tissue, T, DiffusionParams(), rho, TimeGrid(5), beta,
                          invert_kf)


# -- basis ------------------------------------------------------------------------

def test_basis_transpose_is_weighted_adjoint():
    g = Grid((16, 12), (0.3, 0.4))
    b = lattice_basis(g, [1.0, 1.0], [3.0, 3.0], (3, 2))
    rng = np.random.default_rng(0)
    p, f = rng.standard_normal(b.n_p), rng.standard_normal(g.dims)
    assert g.cell_volume * np.vdot(b.apply(p), f) == pytest.approx(p @ b.apply_transpose(f), rel=1e-12)


def test_lattice_layout_and_width():
    g = Grid.cube(32)
    b = lattice_basis(g, [1.0, 2.0], [2.0, 4.0], 3)
    assert b.n_p == 9
    assert b.sigma == pytest.approx(0.75 * 1.0)
    np.testing.assert_allclose(b.centers.min(0), [1.0, 2.0])
    np.testing.assert_allclose(b.centers.max(0), [2.0, 4.0])
    with pytest.raises(ValueError):
        lattice_basis(g, [1.0, 1.0], [2.0, 2.0], 0)
    with pytest.raises(ValueError):
        GaussianBasis(g, [[-1.0, 0.0]], 0.5)


def test_place_basis_uses_fixed_spacing():
    g = Grid.cube(64)
    x, y = g.coords()
    small = ObservationMask(g, ((x - 3) ** 2 + (y - 3) ** 2) < 0.3 ** 2)
    large = ObservationMask(g, ((x - 3) ** 2 + (y - 3) ** 2) < 0.9 ** 2)
    bs, bl = place_basis(small), place_basis(large)
    assert bl.n_p > bs.n_p
    gap = np.diff(np.unique(bl.centers[:, 0]))
    assert gap.max() <= 0.3 + 1e-12
    assert place_basis(large, per_axis=2).n_p == 4


# -- problem / model --------------------------------------------------------------

def test_problem_validation():
    pb = homogeneous_problem()
    with pytest.raises(ValueError):
        dataclasses.replace(pb, beta_p=-1.0)
    with pytest.raises(ValueError):
        dataclasses.replace(pb, d1=ScalarField.zeros(Grid.cube(8)))
    with pytest.raises(ValueError):
        ReducedModel(pb, surrogate=True, surrogate_region="skull")


def test_objective_at_exact_fit_is_regulariser_only():
    pb = homogeneous_problem(rho=0.0)
    m = ReducedModel(pb)
    pt = m.evaluate(np.zeros(pb.basis.n_p))
    w = pb.grid.cell_volume
    expected = 0.5 * w * (np.sum(pb.mask0.apply(pb.d0.values) ** 2) + np.sum(pb.mask1.apply(pb.d1.values) ** 2))
    assert pt.objective == pytest.approx(expected, rel=1e-12)


def test_fixed_kf_uses_parameter_value():
    pb = homogeneous_problem()
    m = ReducedModel(pb)
    pt = m.gradient(m.evaluate(np.zeros(pb.basis.n_p), 5.0))
    assert pt.k_f == pb.params.k_f and pt.g_k == 0.0


# -- Newton step ------------------------------------------------------------------

def test_schur_without_kf_solves_pp_block():
    pb = homogeneous_problem()
    m = ReducedModel(pb, cg_tol=1e-13, matvec_cg_tol=1e-13)
    pt = m.gradient(m.evaluate(np.full(pb.basis.n_p, 0.3)))
    res = schur_solve(m, pt, rtol=1e-12)
    assert res.k_step == 0.0 and res.kf_frozen
    H = np.stack([m.hessvec(pt, e)[0] for e in np.eye(pb.basis.n_p)], axis=1)
    np.testing.assert_allclose(H @ res.p_step, -pt.g_p, rtol=1e-8, atol=1e-10 * np.abs(pt.g_p).max())


def test_schur_step_solves_full_block_system(problem9):
    m = ReducedModel(problem9, cg_tol=1e-13, matvec_cg_tol=1e-13)
    pt = m.gradient(m.evaluate(np.full(problem9.basis.n_p, 0.3), 0.05))
    res = schur_solve(m, pt, rtol=1e-12)
    hp, hk = m.hessvec(pt, res.p_step, res.k_step)
    resid = np.append(hp, hk) + pt.gradient
    assert np.linalg.norm(resid) <= 1e-8 * np.linalg.norm(pt.gradient)


def test_vanishing_hkk_freezes_kf():
    pb = homogeneous_problem(invert_kf=True, T_scale=0.0)
    m = ReducedModel(pb)
    pt = m.gradient(m.evaluate(np.full(pb.basis.n_p, 0.3), 0.1))
    with pytest.warns(UserWarning, match="H_kk"):
        res = schur_solve(m, pt)
    assert res.kf_frozen and res.k_step == 0.0


def test_linear_problem_solved_by_one_newton_step():
    # rho = 0 with k_f fixed: the state is linear in p and the objective quadratic
    pb = homogeneous_problem(n=8, rho=0.0, per_axis=2, beta=1e-3)
    m = ReducedModel(pb, cg_tol=1e-13, matvec_cg_tol=1e-13)
    n_p, w = pb.basis.n_p, pb.grid.cell_volume
    st = m.stepper(pb.params.k_f)
    Phi = pb.basis.matrix
    F = np.stack([st.forward(Phi[:, j].reshape(pb.grid.dims)).states[-1].ravel() for j in range(n_p)], 1)
    O0, O1 = pb.mask0.mask.ravel(), pb.mask1.mask.ravel()
    A = w * (Phi[O0].T @ Phi[O0] + F[O1].T @ F[O1]) + pb.beta_p * np.eye(n_p)
    rhs = w * (Phi[O0].T @ pb.d0.values.ravel()[O0] + F[O1].T @ pb.d1.values.ravel()[O1])
    p_star = np.linalg.solve(A, rhs)
    opts = NewtonOptions(warm_start=False, precondition=False, cg_rtol=1e-12, grad_rtol=1e-8,
                         cg_tol=1e-13, matvec_cg_tol=1e-13)
    state = newton_solve(pb, opts)
    assert state.converged
    assert state.newton_iterations == 1
    np.testing.assert_allclose(state.p, p_star, rtol=1e-7)


# -- preconditioner ---------------------------------------------------------------

@pytest.mark.parametrize("rho", [0.0, 2.0])
def test_surrogate_preconditioner_is_exact_for_constant_coefficients(rho):
    pb = homogeneous_problem(rho=rho)
    tm = ReducedModel(pb, cg_tol=1e-13, matvec_cg_tol=1e-13)
    sm = ReducedModel(pb, surrogate=True)
    pt = tm.evaluate(np.full(pb.basis.n_p, 0.3))
    P = Preconditioner.from_surrogate(sm, pt.p, pt.k_f, pt)
    np.testing.assert_array_equal(P.H_bar, P.H_bar.T)
    assert np.linalg.eigvalsh(P.H_bar).min() > 0
    assert schur_solve(tm, pt, P, rtol=1e-6).cg_iterations <= 2
    assert schur_solve(tm, pt, None, rtol=1e-6).cg_iterations > 2


# -- full solve -------------------------------------------------------------------

@pytest.fixture(scope="module")
def solved(problem9):
    return newton_solve(problem9, NewtonOptions())


def test_newton_converges_with_monotone_objective(solved):
    assert solved.status == "converged"
    obj = np.array([r.objective for r in solved.history if r.phase == "newton"])
    assert np.all(np.diff(obj) <= 1e-12 * abs(obj[0]))
    assert all(r.k_f >= 0 for r in solved.history)
    assert solved.history[-1].grad_norm <= 1e-6 * solved.grad_norm0


def test_recovers_diffusion_rate_from_clean_data(solved, problem9):
    assert abs(solved.k_f - problem9.params.k_f) / problem9.params.k_f < 0.15


def test_convergence_log(tmp_path, solved):
    path = tmp_path / "conv.csv"
    solved.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iter,phase,objective,grad_norm,cg_iters,step_length,k_f"
    assert len(lines) == len(solved.history) + 1


def test_warm_start_saves_true_operator_iterations(problem9):
    cold = newton_solve(problem9, NewtonOptions(warm_start=False))
    warm = newton_solve(problem9, NewtonOptions(warm_start=True))
    assert warm.newton_iterations <= cold.newton_iterations
    assert abs(warm.k_f - cold.k_f) < 1e-3


def test_larger_beta_shrinks_coefficients(problem9):
    a = newton_solve(dataclasses.replace(problem9, beta_p=1e-3))
    b = newton_solve(dataclasses.replace(problem9, beta_p=1e-1))
    assert np.linalg.norm(b.p) < np.linalg.norm(a.p)


# -- L-curve ----------------------------------------------------------------------

def test_menger_curvature_of_circle():
    r = 2.5
    th = np.linspace(0.1, 2.0, 7)
    k = menger_curvature(r * np.cos(th), r * np.sin(th))
    assert np.isnan(k[0]) and np.isnan(k[-1])
    np.testing.assert_allclose(k[1:-1], 1 / r, rtol=1e-12)
    k_cw = menger_curvature(r * np.cos(-th), r * np.sin(-th))
    np.testing.assert_allclose(k_cw[1:-1], -1 / r, rtol=1e-12)


def test_corner_of_synthetic_l_shape():
    # misfit grows and norm drops with beta; the bend sits at beta = 1e-2
    betas = [1e-4, 1e-3, 1e-2, 1e-1, 1.0]
    misfit = [1.0, 1.01, 1.05, 3.0, 10.0]
    norm = [10.0, 5.0, 1.0, 0.95, 0.9]
    pts = [LCurvePoint(b, m, q, "converged") for b, m, q in zip(betas, misfit, norm)]
    corner, kappa = lcurve_corner(pts)
    assert corner == 1e-2
    assert kappa[2] > 0
    pts[1] = LCurvePoint(1e-3, float("nan"), float("nan"), "failed")
    assert lcurve_corner(pts)[0] is not None
    with pytest.raises(ValueError):
        lcurve_corner(pts[:2])


def test_lcurve_input_checks(problem9):
    with pytest.raises(ValueError, match="at least 4"):
        lcurve(problem9, [1e-3, 1e-2, 1e-1])
    with pytest.raises(ValueError):
        lcurve(problem9, [0.0, 1e-3, 1e-2, 1e-1])
