import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fluctlab.functionals import (
    FunctionalError,
    drift_current,
    entropy_Sm,
    eval_JF,
    eval_I,
    eval_density_rate,
    gradient_form_path,
    pair_faces,
    static_integrand,
)
from fluctlab.lattice import coefficients_for
from fluctlab.pde import (
    PathDiscretization,
    face_average,
    grad_f,
    solve_continuity,
    solve_heat,
)

SSEP = coefficients_for("ssep")
KMP = coefficients_for("kmp")


def wavy(M=16, m=0.5, a=0.2):
    return m + a * np.cos(2 * np.pi * np.arange(M) / M)


def random_path(seed, M=16, K=8, scale=0.1):
    """A mass-conserving exclusion-range path with nontrivial currents."""
    rng = np.random.default_rng(seed)
    times = np.linspace(0.0, 0.08, K + 1)
    increments = scale * rng.normal(size=(K, 1, M))
    path, _ = solve_continuity(wavy(M), increments, times)
    assert path.densities.min() > 0.02 and path.densities.max() < 0.98
    return path


# ---------------------------------------------------------------------------
# eval_JF and the duality with eval_I


def test_jf_vanishes_identically_at_zero_field():
    path = random_path(0)
    assert eval_JF(path, np.zeros((1, 16)), SSEP) == 0.0


def test_jf_is_nonpositive_on_the_relaxation_path():
    """The heat flow carries no excess current, so J_F = -(1/2)<chi F, F> <= 0."""
    sol = solve_heat(wavy(32), 0.02)
    rng = np.random.default_rng(5)
    for _ in range(20):
        F = rng.normal(size=(1, 32))
        assert eval_JF(sol, F, SSEP) <= 0.0


@given(seed=st.integers(min_value=0, max_value=2**32 - 1))
@settings(max_examples=20, deadline=None)
def test_jf_never_exceeds_the_rate(seed):
    """sup_F J_F = I: any field gives a lower bound, the control attains it."""
    path = random_path(seed)
    rep = eval_I(path, SSEP)
    rng = np.random.default_rng(seed + 1)
    F = rng.normal(size=(1, 16))
    assert eval_JF(path, F, SSEP) <= rep.value + 1e-8
    attained = eval_JF(path, rep.control, SSEP)
    assert attained == pytest.approx(rep.value, abs=1e-8)


def test_jf_supports_time_dependent_callables():
    path = random_path(3)

    def F(t, P):
        out = np.zeros(P.shape[:-1] + (1,))
        out[..., 0] = np.cos(2 * np.pi * P[..., 0]) * (1.0 + t)
        return out

    val = eval_JF(path, F, SSEP)
    rep = eval_I(path, SSEP)
    assert val <= rep.value + 1e-8


def test_jf_rejects_broken_continuity():
    times = np.linspace(0, 0.1, 3)
    densities = np.broadcast_to(wavy(), (3, 16)).copy()
    increments = np.zeros((2, 1, 16))
    increments[:, 0, 3] = 1.0  # divergence with frozen densities
    bad = PathDiscretization(times, densities, increments)
    with pytest.raises(FunctionalError):
        eval_JF(bad, np.ones((1, 16)), SSEP)


# ---------------------------------------------------------------------------
# eval_I


def test_rate_vanishes_exactly_on_hydrodynamic_paths():
    sol = solve_heat(wavy(32), 0.02)
    rep = eval_I(sol, SSEP)
    assert rep.value == 0.0
    assert rep.clamped_faces == 0


def test_rate_value_recomputes_from_the_control():
    path = random_path(11)
    rep = eval_I(path, SSEP)
    total = 0.0
    for k in range(path.K):
        chif = np.maximum(SSEP.chi(face_average(path.densities[k])), 1e-10)
        G = rep.control[k]
        total += 0.5 * float(path.dts[k]) * pair_faces(chif * G, G)
    assert total == pytest.approx(rep.value, rel=1e-10)
    assert rep.slices == path.K
    assert "value=" in rep.to_kv_text()


def test_rate_without_control_storage():
    path = random_path(11)
    a = eval_I(path, SSEP)
    b = eval_I(path, SSEP, keep_control=False)
    assert b.control is None
    assert a.value == b.value


def test_rate_with_external_field_shifts_the_reference_current():
    """With drive E, the zero-cost path is the driven hydrodynamic one."""
    M = 32
    E = np.zeros((1, M))
    E[0] = 1.5
    from fluctlab.pde import solve_driven_parabolic

    sol = solve_driven_parabolic(wavy(M), E, SSEP, 0.02)
    assert eval_I(sol, SSEP, E=E).value == 0.0
    # and the undriven functional charges exactly the quadratic drive cost
    rep = eval_I(sol, SSEP)
    manual = 0.0
    for k in range(sol.K):
        chif = SSEP.chi(face_average(sol.densities[k]))
        manual += 0.5 * float(sol.dts[k]) * pair_faces(chif * E, E)
    assert rep.value == pytest.approx(manual, rel=1e-12)


def test_drift_current_is_the_discrete_hydrodynamic_flux():
    rho = wavy(16)
    w = drift_current(rho, SSEP)
    assert np.allclose(w, -0.5 * grad_f(rho))


# ---------------------------------------------------------------------------
# contraction to the density rate


def test_density_rate_matches_the_gradient_form_current():
    path = random_path(21)
    contracted = eval_density_rate(path, SSEP)
    gf = gradient_form_path(path, SSEP)
    assert np.array_equal(gf.densities, path.densities)
    assert gf.continuity_residual() < 1e-8 * path.M
    direct = eval_I(gf, SSEP)
    assert contracted.value == pytest.approx(direct.value, abs=1e-6)
    # contraction: the density rate never exceeds the current rate
    assert contracted.value <= eval_I(path, SSEP).value + 1e-10


def test_density_rate_is_zero_on_the_heat_path():
    sol = solve_heat(wavy(32), 0.01)
    rep = eval_density_rate(sol, SSEP)
    assert rep.value < 1e-20


def test_density_rate_rejects_mass_leaks():
    times = np.linspace(0, 0.1, 3)
    densities = np.stack([wavy(), wavy() + 0.01, wavy() + 0.02])
    bad = PathDiscretization(times, densities, np.zeros((2, 1, 16)))
    with pytest.raises(FunctionalError):
        eval_density_rate(bad, SSEP)


# ---------------------------------------------------------------------------
# static integrand and entropy


def test_static_integrand_basics():
    flat = np.full(32, 0.5)
    assert static_integrand(flat, 0.0, SSEP) == 0.0
    # flat profile: cost is exactly j^2 / (2 chi(m))
    assert static_integrand(flat, 0.7, SSEP) == pytest.approx(0.7**2 / (2 * 0.25), rel=1e-14)
    flatk = np.full(32, 2.0)
    assert static_integrand(flatk, 1.0, KMP) == pytest.approx(1.0 / (2 * 4.0), rel=1e-14)
    with pytest.raises(ValueError):
        static_integrand(np.full((8, 8), 0.5), 0.3, SSEP)  # scalar j needs d = 1


def test_static_integrand_with_field_offsets_the_drive():
    flat = np.full(32, 0.5)
    E = np.zeros((1, 32))
    E[0] = 2.0
    # driving exactly the hydrodynamic response chi(m) E costs nothing
    assert static_integrand(flat, 0.25 * 2.0, SSEP, E=E) == pytest.approx(0.0, abs=1e-16)


def test_entropy_matches_closed_forms():
    """Oracle: s'' = D/chi integrates to the Bernoulli relative entropy for
    the exclusion coefficients and to r/m - 1 - log(r/m) for the quadratic
    mobility; both frozen on the same 64-point profile."""
    M = 64
    u = np.arange(M) / M
    g = 0.5 + 0.2 * np.cos(2 * np.pi * u)
    assert entropy_Sm(g, 0.5, SSEP) == pytest.approx(0.040846185547142706, rel=1e-12)
    gk = 1.0 + 0.3 * np.cos(2 * np.pi * u)
    assert entropy_Sm(gk, 1.0, KMP) == pytest.approx(0.02329974235846688, rel=1e-12)


def test_entropy_zero_at_flat_and_infinite_at_drained_energy():
    assert entropy_Sm(np.full(16, 0.3), 0.3, SSEP) == 0.0
    g = np.full(16, 1.0)
    g[0] = 0.0  # chi(0) = 0 for the energy model: infinite relative entropy
    assert entropy_Sm(g, 1.0, KMP) == float("inf")


def test_entropy_endpoint_is_finite_for_exclusion():
    # s(0) = -log(1 - m) stays finite even though chi(0) = 0
    val = entropy_Sm(np.zeros(8), 0.5, SSEP)
    assert val == pytest.approx(np.log(2.0), rel=1e-10)
