import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fluctlab.dynamics import simulate_exclusion
from fluctlab.lattice import LatticeState, make_torus, random_state
from fluctlab.observables import TestFieldFamily as FieldFamily
from fluctlab.observables import (
    ScalarField,
    VectorField,
    block_density,
    current_metric,
    divergence_free_projection,
    empirical_current,
    empirical_density,
    two_block_observable,
)
from fluctlab.pde import div_b, grad_f, grid_positions


def test_scalar_field_pairing_accepts_callables_and_arrays():
    vals = np.arange(8.0)
    f = ScalarField(vals)
    assert f.pair(np.ones(8)) == pytest.approx(3.5)
    assert f.pair(lambda P: np.ones(P.shape[:-1])) == pytest.approx(3.5)
    assert f.mass() == pytest.approx(3.5)


def test_vector_field_pairing_normalization():
    J = VectorField(np.ones((2, 4, 4)))
    F = np.ones((2, 4, 4))
    # sum over components and sites divided by M^d
    assert J.pair(F) == pytest.approx(2.0)


def test_pair_gradient_is_summation_by_parts_exact():
    rng = np.random.default_rng(1)
    J = VectorField(rng.normal(size=(1, 32)))
    f = rng.normal(size=32)
    direct = J.pair(grad_f(f))
    via = J.pair_gradient(f)
    assert direct == via
    # and equals -<div J, f> by adjointness
    assert via == pytest.approx(-float((div_b(J.components) * f).mean()), abs=1e-12)


def test_empirical_density_resampling_preserves_mass():
    grid = make_torus(1, 64)
    state = random_state(grid, 0.4, seed=9)
    fine = empirical_density(state)
    coarse = empirical_density(state, 16)
    assert fine.mass() == pytest.approx(coarse.mass(), abs=1e-14)
    assert coarse.M == 16


def test_empirical_current_scaling():
    """One +1 jump across bond (x, x+1) contributes 1/N to the stored face value.

    Pairing with a unit test field then yields 1/N^(d+1), the measure
    normalization of W^N.
    """
    grid = make_torus(1, 16)
    state = random_state(grid, 0.5, seed=4)
    final, ledger = simulate_exclusion(state, 0.2, seed=5, record_events=True)
    J = empirical_current(ledger)
    total_signed = float(ledger.W.sum())
    assert J.pair(np.ones((1, 16))) == pytest.approx(total_signed / 16**2, abs=1e-15)
    # intermediate-time value equals a manual event sum up to t
    J_half = empirical_current(ledger, t=0.1)
    ev = ledger.events
    keep = ev.times <= 0.1
    W_manual = np.zeros((1, 16))
    np.add.at(W_manual, (ev.directions[keep], ev.sites[keep]), ev.signs[keep])
    assert np.array_equal(J_half.components, W_manual / 16)


def test_empirical_current_needs_events_for_intermediate_times():
    grid = make_torus(1, 16)
    state = random_state(grid, 0.5, seed=4)
    final, ledger = simulate_exclusion(state, 0.2, seed=5)
    with pytest.raises(ValueError):
        empirical_current(ledger, t=0.1)


def test_block_density_window():
    grid = make_torus(1, 8)
    state = LatticeState(grid, "exclusion", np.array([1, 0, 1, 1, 0, 0, 1, 0]))
    assert block_density(state, 2, 1) == pytest.approx(2 / 3)
    assert block_density(state, 0, 0) == 1.0
    with pytest.raises(ValueError):
        block_density(state, 0, -1)


def test_two_block_observable_decreases_toward_equilibrium():
    """Product measures factorize, so V(eps) is small for a fresh random
    state and exactly zero for deterministic full/empty states."""
    grid = make_torus(1, 2048)
    for level in (0.0, 1.0):
        state = LatticeState(grid, "exclusion", np.full(2048, level))
        assert two_block_observable(state, 0.05) == 0.0
    state = random_state(grid, 0.5, seed=2)
    clustered = np.zeros(2048, dtype=np.int8)
    clustered[:1024] = 1  # fully segregated: blocks straddling the step deviate
    seg = LatticeState(grid, "exclusion", clustered)
    assert two_block_observable(state, 0.05) < 0.5 * two_block_observable(seg, 0.05)
    with pytest.raises(ValueError):
        two_block_observable(state, 1e-4)  # window below one site


def test_field_family_members_are_bounded_and_distinct():
    fam = FieldFamily(1, 10)
    P = grid_positions(64, 1)
    seen = []
    for k in range(10):
        F = fam.evaluate(k, P)
        assert F.shape == (1, 64)
        assert np.abs(F).max() <= 1.0 + 1e-12
        seen.append(F)
        assert isinstance(fam.label(k), str)
    distinct = {tuple(np.round(F.ravel(), 12)) for F in seen}
    assert len(distinct) == 10


@given(seed=st.integers(min_value=0, max_value=2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_current_metric_axioms(seed):
    rng = np.random.default_rng(seed)
    A = VectorField(rng.normal(size=(1, 16)))
    B = VectorField(rng.normal(size=(1, 16)))
    C = VectorField(rng.normal(size=(1, 16)))
    assert current_metric(A, A) == 0.0
    ab = current_metric(A, B)
    assert ab == pytest.approx(current_metric(B, A), abs=1e-14)
    assert 0.0 <= ab <= 1.0
    assert current_metric(A, C) <= ab + current_metric(B, C) + 1e-12


@given(seed=st.integers(min_value=0, max_value=2**32 - 1), d=st.integers(1, 2))
@settings(max_examples=25, deadline=None)
def test_projection_produces_divergence_free_fields(seed, d):
    rng = np.random.default_rng(seed)
    M = 8
    J = VectorField(rng.normal(size=(d,) + (M,) * d))
    P = divergence_free_projection(J)
    scale = 1 + np.abs(J.components).max()
    assert np.abs(div_b(P.components)).max() < 1e-10 * scale * M
    # idempotent
    PP = divergence_free_projection(P)
    assert np.abs(PP.components - P.components).max() < 1e-12 * scale
    # removed part is orthogonal to the result
    removed = J.components - P.components
    assert abs((removed * P.components).sum()) < 1e-10 * scale**2
    # gradients are annihilated
    G = VectorField(grad_f(rng.normal(size=(M,) * d)))
    PG = divergence_free_projection(G)
    assert np.abs(PG.components).max() < 1e-9 * M


def test_projection_keeps_constants():
    const = VectorField(np.full((2, 8, 8), 1.3))
    out = divergence_free_projection(const)
    assert np.allclose(out.components, 1.3, atol=1e-13)
