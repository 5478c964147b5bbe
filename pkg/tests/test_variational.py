import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fluctlab.functionals import entropy_Sm, eval_I, static_integrand
from fluctlab.lattice import coefficients_for
from fluctlab.pde import PathDiscretization
from fluctlab.variational import (
    VariationalError,
    _project_mass_box,
    _psi_value_grad,
    _um_value_grad,
    build_relaxation_path,
    build_straight_path,
    closed_form_Um_1d,
    eval_Psi_v,
    glue_paths,
    minimize_Um,
    optimize_PhiT,
    phase_transition_scan,
    second_derivative_criterion,
    traveling_wave_path,
)

SSEP = coefficients_for("ssep")
KMP = coefficients_for("kmp")


def wavy(M=32, m=0.5, a=0.2):
    return m + a * np.cos(2 * np.pi * np.arange(M) / M)


# ---------------------------------------------------------------------------
# projection and gradients


@given(seed=st.integers(min_value=0, max_value=2**32 - 1),
       m=st.floats(min_value=0.1, max_value=0.9))
@settings(max_examples=50, deadline=None)
def test_mass_box_projection(seed, m):
    rng = np.random.default_rng(seed)
    x = rng.normal(scale=2.0, size=24)
    y = _project_mass_box(x, m, 0.0, 1.0)
    assert y.mean() == pytest.approx(m, abs=1e-14)
    assert y.min() >= 0.0 and y.max() <= 1.0
    # idempotent
    yy = _project_mass_box(y, m, 0.0, 1.0)
    assert np.abs(yy - y).max() < 1e-12
    # KKT: free coordinates share one common shift from x
    free = (y > 1e-12) & (y < 1 - 1e-12)
    if free.sum() > 1:
        shifts = (y - x)[free]
        assert np.ptp(shifts) < 1e-9


def test_projection_with_infinite_upper_end():
    rng = np.random.default_rng(0)
    x = rng.normal(scale=3.0, size=16)
    y = _project_mass_box(x, 2.0, 0.0, np.inf)
    assert y.mean() == pytest.approx(2.0, abs=1e-13)
    assert y.min() >= 0.0


def finite_difference_gradient(fn, x, h=1e-7):
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xp.flat[i] += h
        xm = x.copy()
        xm.flat[i] -= h
        g.flat[i] = (fn(xp) - fn(xm)) / (2 * h)
    return g


def test_holding_cost_gradient_matches_finite_differences():
    rho = wavy(16, 0.5, 0.15)
    jf = np.full((1, 16), 0.4)
    val, grad = _um_value_grad(rho, jf, SSEP, 1e-10)
    fd = finite_difference_gradient(lambda r: _um_value_grad(r, jf, SSEP, 1e-10)[0], rho)
    assert np.abs(grad - fd).max() < 1e-6 * (1 + np.abs(fd).max())
    assert val > 0


@pytest.mark.parametrize("v", [1.7, -2.3])
def test_wave_cost_gradient_matches_finite_differences(v):
    rho = wavy(16, 1.0, 0.3)
    val, grad = _psi_value_grad(rho, 0.8, v, 1.0, KMP, 1e-10)
    fd = finite_difference_gradient(
        lambda r: _psi_value_grad(r, 0.8, v, 1.0, KMP, 1e-10)[0], rho
    )
    assert np.abs(grad - fd).max() < 1e-6 * (1 + np.abs(fd).max())


# ---------------------------------------------------------------------------
# static profile minimization


def test_flat_profile_is_optimal_for_exclusion():
    """x^2/y is jointly convex and chi is concave for the exclusion model,
    so the constant profile minimizes the holding cost at every current."""
    res = minimize_Um(0.5, 0.5, SSEP, {"M": 32})
    assert res.converged
    assert res.value == pytest.approx(0.5**2 / (2 * 0.25), rel=1e-12)
    assert np.abs(res.minimizer - 0.5).max() < 1e-6
    assert res.start_index == 0  # the constant start wins ties


def test_closed_form_agrees_with_the_minimizer():
    for coeffs, m, j in [(SSEP, 0.3, 0.4), (KMP, 1.5, 1.0)]:
        closed = closed_form_Um_1d(j, m, coeffs)
        assert closed == pytest.approx(j**2 / (2 * float(coeffs.chi(m))), rel=1e-14)
        res = minimize_Um(j, m, coeffs, {"M": 32})
        assert res.value == pytest.approx(closed, abs=1e-4)


def test_minimize_um_zero_current_is_free():
    res = minimize_Um(0.0, 0.8, SSEP, {"M": 32})
    assert res.value == 0.0
    assert np.all(res.minimizer == 0.8)


def test_minimize_um_rejects_bad_mass():
    with pytest.raises(VariationalError):
        minimize_Um(0.5, 1.5, SSEP, {"M": 32})


def test_minimize_um_declares_rotational_currents_unholdable():
    rng = np.random.default_rng(4)
    j = rng.normal(size=(2, 8, 8))  # generic field: not divergence free
    res = minimize_Um(j, 0.5, SSEP)
    assert res.value == float("inf")
    assert res.iterations == 0


def test_second_derivative_criterion_flags_only_the_quadratic_mobility():
    lam, fpp, transition = second_derivative_criterion(1.0, KMP)
    assert lam == pytest.approx(2.0, rel=1e-12)
    assert fpp == pytest.approx(-2.0, rel=1e-12)
    assert transition
    lam, fpp, transition = second_derivative_criterion(0.5, SSEP)
    assert lam == pytest.approx(0.0, abs=1e-14)
    assert fpp == pytest.approx(32.0, rel=1e-12)
    assert not transition


def test_second_derivative_matches_central_differences():
    """F(r) = (1 + lambda (r - m))^2 / chi(r) with lambda = chi'(m)/chi(m):
    differentiate numerically at m and compare."""
    for coeffs, m in [(KMP, 1.0), (KMP, 0.7), (SSEP, 0.5), (SSEP, 0.3)]:
        lam = float(coeffs.chi_prime(m)) / float(coeffs.chi(m))
        _, fpp, _ = second_derivative_criterion(m, coeffs)

        def F(r):
            return (1 + lam * (r - m)) ** 2 / float(coeffs.chi(r))

        h = 1e-5 * max(1.0, abs(m))
        fd = (F(m + h) - 2 * F(m) + F(m - h)) / h**2
        assert fpp == pytest.approx(fd, rel=1e-4)


# ---------------------------------------------------------------------------
# traveling waves


def test_zero_speed_wave_is_the_static_problem():
    a = eval_Psi_v(0.6, 0.0, 0.5, SSEP, {"M": 32})
    b = minimize_Um(0.6, 0.5, SSEP, {"M": 32})
    assert a.value == b.value


def test_wave_beats_the_flat_profile_past_the_transition():
    res = eval_Psi_v(10.0, 20.0, 1.0, KMP, {"M": 32})
    flat = closed_form_Um_1d(10.0, 1.0, KMP)
    assert res.value < flat * 0.99  # strictly better, by more than 1%


def test_wave_path_cost_matches_the_wave_integrand():
    """The traveling-wave path is exactly continuous and its rate per unit
    time equals the Psi_v objective at the same profile."""
    res = eval_Psi_v(10.0, 20.0, 1.0, KMP, {"M": 32, "max_iter": 1500})
    path = traveling_wave_path(res.minimizer, 20.0, 10.0)
    assert path.continuity_residual() < 1e-10
    rate = eval_I(path, KMP, keep_control=False).value / path.T
    assert rate == pytest.approx(res.value, rel=1e-9)
    # whole revolutions return to the start and average to the target
    assert np.array_equal(path.densities[-1], path.densities[0])
    assert np.abs(path.W_total() / path.T - 10.0).max() < 1e-9


def test_wave_path_handles_negative_speeds():
    rho = wavy(16, 1.0, 0.4)
    p = traveling_wave_path(rho, -3.0, 2.0)
    assert p.continuity_residual() < 1e-10
    assert np.array_equal(p.densities[-1], rho)


def test_wave_path_rejects_zero_speed():
    with pytest.raises(VariationalError):
        traveling_wave_path(wavy(), 0.0, 1.0)


# ---------------------------------------------------------------------------
# phase scan


def test_phase_scan_reports_zero_gap_for_exclusion():
    res = phase_transition_scan(0.5, [0.0, 1.0, 3.0], SSEP, {"M": 32})
    for row in res.rows:
        assert row.Psi_min <= row.U + 1e-12
        assert abs(row.gap) <= 1e-4 * max(row.U, 1.0)
    assert res.jstar is None


def test_phase_scan_finds_the_energy_model_transition():
    res = phase_transition_scan(
        1.0, [0.0, 2.0, 6.0], KMP,
        {"M": 32, "find_jstar": True, "jstar_resolution": 1.0, "jstar_rel_gap": 1e-3},
    )
    rows = {row.J: row for row in res.rows}
    assert rows[0.0].gap == 0.0
    assert rows[6.0].gap / rows[6.0].U > 0.01
    assert res.jstar is not None
    assert 0.0 < res.jstar < 6.0


# ---------------------------------------------------------------------------
# path problems


def test_path_rate_is_zero_at_zero_current():
    res = optimize_PhiT(0.0, np.full(32, 0.5), 0.5, 8, SSEP)
    assert res.value == 0.0
    assert res.converged


def test_path_rate_on_flat_data_equals_the_static_cost():
    res = optimize_PhiT(0.5, np.full(32, 0.5), 1.0, 16, SSEP)
    assert res.value == pytest.approx(0.5, rel=1e-9)
    # the optimal path holds the flat profile and drives uniformly
    assert np.abs(res.path.increments - 0.5).max() < 1e-6
    # endpoint constraint: time-averaged current hits the target exactly
    assert np.abs(res.path.W_total() - 0.5).max() < 1e-9


def test_path_rate_improves_on_static_holding_for_wavy_data():
    gamma = wavy(32, 0.5, 0.2)
    res = optimize_PhiT(0.5, gamma, 1.0, 16, SSEP)
    hold = static_integrand(gamma, 0.5, SSEP)
    assert res.value < hold
    assert res.path.continuity_residual() < 1e-8 * 32
    assert np.abs(res.path.W_total() - 0.5).max() < 1e-9
    assert res.history == sorted(res.history, reverse=True)  # monotone descent


def test_path_rate_declares_rotational_targets_infinite():
    rng = np.random.default_rng(8)
    J = rng.normal(size=(1, 32))  # spatially varying d=1 current: div != 0
    res = optimize_PhiT(J, np.full(32, 0.5), 1.0, 8, SSEP)
    assert res.value == float("inf")


def test_path_rate_accepts_a_wave_warm_start():
    """Feeding the traveling wave as an extra initial guess can only help:
    the result is never worse than the wave's own cost."""
    J, m, T = 6.0, 1.0, 0.5
    prof = eval_Psi_v(J, 2 * J, m, KMP, {"M": 32, "max_iter": 800})
    wave = traveling_wave_path(prof.minimizer, 2 * J, J, T=T)
    gamma = wave.densities[0]
    res = optimize_PhiT(J, gamma, T, wave.K, KMP, {"extra_inits": [wave]})
    wave_rate = eval_I(wave, KMP, keep_control=False).value / T
    assert res.value <= wave_rate + 1e-9


# ---------------------------------------------------------------------------
# constructed paths


def test_straight_path_connects_and_averages():
    gamma = wavy(32, 0.5, 0.1)
    rho = wavy(32, 0.5, 0.2)
    p = build_straight_path(gamma, rho, 0.4, 4.0)
    assert np.array_equal(p.densities[0], gamma)
    assert p.continuity_residual() < 1e-8 * 32
    assert p.T == 4.0
    # ramps are gradient currents: the mean current still averages to j
    assert float(p.W_total().mean()) / p.T == pytest.approx(0.4, rel=1e-10)
    # the middle third holds rho
    mid = p.densities[len(p.times) // 2]
    assert np.abs(mid - rho).max() < 1e-9


def test_straight_path_needs_time_for_the_ramps():
    with pytest.raises(VariationalError):
        build_straight_path(wavy(), wavy(), 0.3, 1.5)


def test_straight_path_rejects_mass_mismatch():
    with pytest.raises(VariationalError):
        build_straight_path(wavy(32, 0.5, 0.1), wavy(32, 0.6, 0.1), 0.3, 4.0)


def test_glue_paths_adds_costs_and_endpoints():
    rho = wavy(32, 1.0, 0.3)
    p1 = traveling_wave_path(rho, 2.0, 1.0)
    p2 = traveling_wave_path(rho, -2.0, 1.0)
    g = glue_paths(p1, p2)
    assert g.K == p1.K + p2.K
    assert g.T == pytest.approx(p1.T + p2.T)
    i1 = eval_I(p1, KMP, keep_control=False).value
    i2 = eval_I(p2, KMP, keep_control=False).value
    ig = eval_I(g, KMP, keep_control=False).value
    assert ig == pytest.approx(i1 + i2, abs=1e-10)
    assert np.allclose(g.W_total(), p1.W_total() + p2.W_total(), atol=1e-13)


def test_glue_paths_rejects_mismatched_seams():
    p1 = traveling_wave_path(wavy(32, 1.0, 0.3), 2.0, 1.0)
    p2 = traveling_wave_path(wavy(32, 1.0, 0.1), 2.0, 1.0)
    with pytest.raises(VariationalError):
        glue_paths(p1, p2)


def test_relaxation_path_meets_the_entropy_budget():
    gamma1 = np.full(32, 0.5)
    gamma2 = wavy(32, 0.5, 0.1)
    delta = 0.05
    path = build_relaxation_path(gamma1, gamma2, 0.5, delta, SSEP)
    bound = entropy_Sm(gamma2, 0.5, SSEP) + delta
    cost = eval_I(path, SSEP, keep_control=False).value
    assert cost <= bound
    assert np.array_equal(path.densities[0], gamma1)
    assert np.abs(path.densities[-1] - gamma2).max() < 1e-9


def test_relaxation_path_reports_failure_with_the_best_value():
    gamma1 = np.full(16, 0.5)
    gamma2 = wavy(16, 0.5, 0.3)
    with pytest.raises(VariationalError) as err:
        build_relaxation_path(gamma1, gamma2, 0.5, 1e-12, SSEP,
                              {"horizons": (0.05,)})
    assert "best" in str(err.value)


# ---------------------------------------------------------------------------
# structural probes backing the scan logic


def test_static_integrand_is_jointly_convex_for_exclusion():
    """Convexity of (rho, j) -> cost underlies the zero-gap certificate."""
    rng = np.random.default_rng(2)
    M = 16
    for _ in range(50):
        r1 = 0.5 + 0.35 * rng.uniform(-1, 1, size=M)
        r2 = 0.5 + 0.35 * rng.uniform(-1, 1, size=M)
        j1, j2 = rng.uniform(-1, 1, size=2)
        lamb = rng.uniform(0.0, 1.0)
        mid = static_integrand(lamb * r1 + (1 - lamb) * r2, lamb * j1 + (1 - lamb) * j2, SSEP)
        ends = lamb * static_integrand(r1, j1, SSEP) + (1 - lamb) * static_integrand(r2, j2, SSEP)
        assert mid <= ends + 1e-10
