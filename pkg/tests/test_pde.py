"""Discrete calculus and PDE solver checks.

The discrete operators are exact algebraic objects (adjoint pair, FFT
inversion), so most tolerances here are rounding level. Accuracy against
continuum solutions is checked where the solvers claim it.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fluctlab.lattice import coefficients_for
from fluctlab.pde import (
    PDEError,
    PathDiscretization,
    cfl_limit,
    div_b,
    face_average,
    grad_f,
    grid_positions,
    laplacian,
    poisson_periodic,
    solve_continuity,
    solve_driven_parabolic,
    solve_elliptic_chi,
    solve_heat,
)

arrays_1d = st.integers(min_value=0, max_value=2**32 - 1).map(
    lambda s: np.random.default_rng(s).normal(size=16)
)


@given(seed=st.integers(min_value=0, max_value=2**32 - 1), d=st.integers(1, 3))
@settings(max_examples=40, deadline=None)
def test_divergence_is_minus_gradient_adjoint(seed, d):
    """<grad f, w> + <f, div w> = 0 exactly (summation by parts on the torus)."""
    rng = np.random.default_rng(seed)
    M = 6
    f = rng.normal(size=(M,) * d)
    w = rng.normal(size=(d,) + (M,) * d)
    lhs = (grad_f(f) * w).sum()
    rhs = (f * div_b(w)).sum()
    assert abs(lhs + rhs) <= 1e-9 * (1 + abs(lhs))


def test_gradient_of_constant_vanishes_and_laplacian_stencil():
    f = np.full((8, 8), 3.7)
    assert not grad_f(f).any()
    g = np.zeros((8,))
    g[3] = 1.0
    lap = laplacian(g)
    M = 8
    assert lap[3] == -2 * M**2
    assert lap[2] == M**2 and lap[4] == M**2
    assert abs(lap.sum()) < 1e-9  # divergence form conserves mass


def test_face_average_shape_and_endpoints():
    f = np.arange(4.0)
    fa = face_average(f)
    assert fa.shape == (1, 4)
    assert np.allclose(fa[0], [0.5, 1.5, 2.5, 1.5])  # wraps around


@given(seed=st.integers(min_value=0, max_value=2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_poisson_inverts_the_discrete_laplacian(seed):
    rng = np.random.default_rng(seed)
    rhs = rng.normal(size=(12, 12))
    rhs -= rhs.mean()
    phi = poisson_periodic(rhs)
    assert abs(phi.mean()) < 1e-12
    assert np.abs(laplacian(phi) - rhs).max() < 1e-8


def test_poisson_rejects_nonzero_mean():
    with pytest.raises(PDEError):
        poisson_periodic(np.full(16, 0.1))


def test_grid_positions_layout():
    P = grid_positions(4, 2)
    assert P.shape == (4, 4, 2)
    assert P[1, 2, 0] == 0.25 and P[1, 2, 1] == 0.5


def test_path_discretization_validates_shapes():
    times = np.linspace(0, 1, 5)
    with pytest.raises(ValueError):
        PathDiscretization(times, np.zeros((4, 8)), np.zeros((4, 1, 8)))
    with pytest.raises(ValueError):
        PathDiscretization(times, np.zeros((5, 8)), np.zeros((4, 2, 8)))


def test_path_cumulative_current_consistency():
    rng = np.random.default_rng(0)
    gamma = 0.5 + 0.1 * np.cos(2 * np.pi * np.arange(16) / 16)
    times = np.linspace(0, 0.3, 7)
    path, _ = solve_continuity(gamma, rng.normal(size=(6, 1, 16)), times)
    Wc = path.W_cumulative()
    assert not Wc[0].any()
    assert np.allclose(Wc[-1], path.W_total())
    assert path.continuity_residual() < 1e-12


def test_heat_flow_decays_cosine_at_the_analytic_rate():
    """rho_t = m + a e^{-2 pi^2 t} cos(2 pi u) solves d_t rho = (1/2) lap rho."""
    M = 256
    u = np.arange(M) / M
    gamma = 0.5 + 0.25 * np.cos(2 * np.pi * u)
    T = 0.05
    sol = solve_heat(gamma, T)
    exact = 0.5 + 0.25 * np.exp(-2 * np.pi**2 * T) * np.cos(2 * np.pi * u)
    assert np.abs(sol.densities[-1] - exact).max() < 1e-4
    assert sol.continuity_residual() < 1e-10 * M


def test_heat_flow_conserves_mass_exactly():
    rng = np.random.default_rng(7)
    gamma = 0.5 + 0.2 * rng.normal(size=(16, 16)).clip(-1, 1) * 0.5
    sol = solve_heat(gamma, 0.01)
    assert sol.mass_drift() < 1e-14


def test_heat_flow_rejects_unstable_steps():
    with pytest.raises(PDEError):
        solve_heat(np.full(64, 0.5), 0.1, dt=10 * cfl_limit(64, 1))


def test_driven_parabolic_reaches_the_steady_profile():
    """With F = grad(V), the stationary state solves (1/2) d(rho)' = chi(rho) V'.

    For the exclusion coefficients this is the Fermi profile
    rho = 1/(1 + e^{-2V + c}); run long enough and compare.
    """
    M = 64
    coeffs = coefficients_for("ssep")
    u = np.arange(M) / M

    def field(t, P):
        # gradient of V(u) = 0.3 cos(2 pi u), sampled smoothly
        out = np.zeros(P.shape[:-1] + (1,))
        out[..., 0] = -0.3 * 2 * np.pi * np.sin(2 * np.pi * P[..., 0])
        return out

    sol = solve_driven_parabolic(np.full(M, 0.5), field, coeffs, 2.0)
    rho = sol.densities[-1]
    # stationarity: in d = 1 the limiting current is spatially constant
    assert np.abs(div_b(sol.increments[-1])).max() < 1e-6
    w = sol.increments[-1][0]
    assert np.abs(w - w.mean()).max() < 1e-6
    # Fermi shape with the same mass; fields are sampled at face label
    # nodes (half a cell off the midpoint), so this is first order in 1/M
    V = 0.3 * np.cos(2 * np.pi * u)
    from scipy.optimize import brentq

    c = brentq(lambda c: (1 / (1 + np.exp(-2 * V + c))).mean() - 0.5, -20, 20)
    fermi = 1 / (1 + np.exp(-2 * V + c))
    assert np.abs(rho - fermi).max() < 0.01


def test_driven_parabolic_detects_escape():
    coeffs = coefficients_for("ssep")
    gamma = np.full(32, 0.99)

    def push(t, P):
        out = np.zeros(P.shape[:-1] + (1,))
        out[..., 0] = 40.0 * np.sin(2 * np.pi * P[..., 0])
        return out

    with pytest.raises(PDEError):
        solve_driven_parabolic(gamma, push, coeffs, 1.0)


def test_continuity_transport_is_exact():
    rng = np.random.default_rng(3)
    gamma = 1.0 + 0.2 * np.cos(2 * np.pi * np.arange(24) / 24)
    increments = rng.normal(size=(10, 1, 24))
    times = np.linspace(0.0, 1.0, 11)
    path, flags = solve_continuity(gamma, increments, times, interval=(0.0, np.inf))
    assert path.continuity_residual() < 1e-10
    assert flags.min_density <= flags.max_density
    # reversing the current play-back recovers gamma
    back, _ = solve_continuity(path.densities[-1], -increments[::-1], times)
    assert np.abs(back.densities[-1] - gamma).max() < 1e-10


def test_elliptic_chi_solves_a_manufactured_problem():
    """Pick H, compute div(chi grad H) discretely, solve back."""
    M = 64
    u = np.arange(M) / M
    coeffs = coefficients_for("ssep")
    pi = 0.5 + 0.3 * np.cos(2 * np.pi * u)
    H_true = np.sin(4 * np.pi * u) + 0.5 * np.cos(2 * np.pi * u)
    H_true -= H_true.mean()
    chif = coeffs.chi(face_average(pi))
    rhs = div_b(chif * grad_f(H_true))
    H, info = solve_elliptic_chi(pi, rhs, coeffs)
    assert np.abs(H - H_true).max() < 1e-8
    assert info.residual < 1e-8


def test_elliptic_chi_rejects_unbalanced_source():
    coeffs = coefficients_for("ssep")
    with pytest.raises(PDEError):
        solve_elliptic_chi(np.full(32, 0.5), np.full(32, 1.0), coeffs)
