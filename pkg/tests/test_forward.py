import numpy as np
import pytest

from glioinv.field import Grid, ScalarField, TensorField, TimeGrid
from glioinv.forward import (CrankNicolsonHalfStep, ReactionParams, diffusion_halfstep, forward_solve,
                             linearized_forward, logistic_flow, reaction_step)
from glioinv.krylov import ConvergenceError
from glioinv.field import spectral_ops

G = Grid.cube(16)


def smooth_c0(grid=G):
    x, y = grid.coords()
    return 0.3 + 0.2 * np.sin(x) * np.cos(y)


def test_constant_states_are_invariant():
    K = TensorField.isotropic(G, 0.1)
    for v in (0.0, 1.0):
        traj = forward_solve(ScalarField(G, np.full(G.dims, v)), K, 2.0, TimeGrid(4))
        np.testing.assert_allclose(traj.final.values, v, atol=1e-12)


def test_reaction_is_exact_logistic():
    c = np.array([0.1, 0.5, 0.9])
    rho, t = 2.0, 0.7
    exact = c * np.exp(rho * t) / (1 - c + c * np.exp(rho * t))
    np.testing.assert_allclose(logistic_flow(c, rho, t), exact, rtol=1e-14)
    half = logistic_flow(logistic_flow(c, rho, t / 2), rho, t / 2)
    np.testing.assert_allclose(half, exact, rtol=1e-14)
    with pytest.raises(ValueError):
        reaction_step(ScalarField(Grid.cube(4), np.zeros((4, 4))), rho, 0.0)
    with pytest.raises(ValueError):
        ReactionParams(-1.0)


def test_spatially_uniform_state_follows_logistic():
    K = TensorField.isotropic(G, 0.1)
    traj = forward_solve(ScalarField(G, np.full(G.dims, 0.2)), K, 2.0, TimeGrid(5))
    np.testing.assert_allclose(traj.final.values, logistic_flow(0.2, 2.0, 1.0), rtol=1e-12)


def test_pure_diffusion_conserves_mass_and_decays_modes():
    K = TensorField.isotropic(G, 0.1)
    c0 = smooth_c0()
    traj = forward_solve(ScalarField(G, c0), K, 0.0, TimeGrid(10))
    assert traj.final.values.sum() == pytest.approx(c0.sum(), rel=1e-12)
    # Crank-Nicolson amplification of the (1, 1) mode
    lam = -0.1 * 2
    a = 0.25 * 0.1
    amp = ((1 + a * lam) / (1 - a * lam)) ** 20
    np.testing.assert_allclose(traj.final.values - 0.3, amp * (c0 - 0.3), atol=1e-9)


def test_semigroup_property():
    K = TensorField.isotropic(G, 0.1)
    c0 = ScalarField(G, smooth_c0())
    whole = forward_solve(c0, K, 2.0, TimeGrid(8, 1.0))
    first = forward_solve(c0, K, 2.0, TimeGrid(4, 0.5))
    second = forward_solve(first.final, K, 2.0, TimeGrid(4, 0.5))
    np.testing.assert_allclose(second.final.values, whole.final.values, atol=1e-9)


def test_solution_stays_in_unit_interval():
    g = Grid.cube(32)
    K = TensorField.isotropic(g, 0.05)
    x, y = g.coords()
    c0 = np.exp(-((x - np.pi) ** 2 + (y - np.pi) ** 2) / 2.0)
    traj = forward_solve(ScalarField(g, c0), K, 2.0, TimeGrid(10))
    # spectral undershoot only at the level of the resolution error
    assert traj.states.min() > -1e-4 and traj.states.max() < 1 + 1e-6


def test_invalid_inputs():
    K = TensorField.isotropic(G, 0.1)
    with pytest.raises(ValueError):
        forward_solve(ScalarField(G, np.full(G.dims, 1.5)), K, 2.0, TimeGrid(2))
    with pytest.raises(ValueError):
        forward_solve(ScalarField(Grid.cube(8), np.zeros((8, 8))), K, 2.0, TimeGrid(2))


def test_cg_failure_raises():
    x, _ = G.coords()
    K = TensorField.isotropic(G, 0.01 + 5.0 * (1 + np.sin(x)) * np.ones(G.dims))
    with pytest.raises(ConvergenceError):
        diffusion_halfstep(ScalarField(G, smooth_c0()), K, 1.0, cg_tol=1e-14, max_iters=1)


def test_tangent_matches_finite_difference():
    K = TensorField.isotropic(G, 0.1)
    T = TensorField.isotropic(G, 1.0)
    c0 = smooth_c0()
    dp = 0.05 * np.cos(2 * G.coords()[0]) * np.ones(G.dims)
    tg = TimeGrid(4)
    traj = forward_solve(ScalarField(G, c0), K, 2.0, tg)
    tan = linearized_forward(traj, ScalarField(G, dp), 0.3, K, T, 2.0, tg, cg_tol=1e-12)
    h = 1e-5
    Kp = TensorField(G, K.values + h * 0.3 * T.values)
    Km = TensorField(G, K.values - h * 0.3 * T.values)
    fp = forward_solve(ScalarField(G, c0 + h * dp), Kp, 2.0, tg, cg_tol=1e-13).final.values
    fm = forward_solve(ScalarField(G, c0 - h * dp), Km, 2.0, tg, cg_tol=1e-13).final.values
    fd = (fp - fm) / (2 * h)
    assert np.linalg.norm(tan.final.values - fd) <= 1e-6 * np.linalg.norm(fd)


def test_halfstep_is_linear_and_symmetric():
    ops = spectral_ops(G)
    rng = np.random.default_rng(0)
    A = rng.standard_normal((*G.dims, 2, 2))
    K = TensorField.from_matrices(G, 0.05 * (A @ np.swapaxes(A, -1, -2)) + 0.01 * np.eye(2))
    half = CrankNicolsonHalfStep(ops, K.values, None, 0.05, 1e-13, 500)
    u, w = rng.standard_normal(G.dims), rng.standard_normal(G.dims)
    assert np.vdot(half.step(u), w) == pytest.approx(np.vdot(u, half.step(w)), rel=1e-9)


def test_spectral_halfstep_with_constant_tensor_matches_diffusion_operator():
    from glioinv.field import apply_diffusion
    from glioinv.forward import SpectralHalfStep
    g = Grid((16, 12), (0.4, 0.5))
    M = np.array([[0.3, 0.1], [0.1, 0.2]])
    K = TensorField.from_matrices(g, np.broadcast_to(M, (*g.dims, 2, 2)).copy())
    u = np.random.default_rng(0).standard_normal(g.dims)
    tau = 1e-7
    half = SpectralHalfStep(spectral_ops(g), M, np.zeros((2, 2)), tau)
    Au = apply_diffusion(ScalarField(g, u), K).values
    np.testing.assert_allclose((half.step(u) - u) / tau, Au, rtol=1e-5, atol=1e-5 * np.abs(Au).max())
    iso = SpectralHalfStep(spectral_ops(g), 0.25, 0.0, 0.3)
    ten = SpectralHalfStep(spectral_ops(g), 0.25 * np.eye(2), np.zeros((2, 2)), 0.3)
    np.testing.assert_allclose(iso.step(u), ten.step(u), atol=1e-14)
