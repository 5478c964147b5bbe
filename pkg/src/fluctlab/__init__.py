"""Desk-scale laboratory for current fluctuations in conservative lattice gases.

The package simulates stochastic lattice gases (symmetric exclusion, weakly
asymmetric exclusion, energy-exchange chains) with an exact event-driven
kernel, measures empirical density and current, evaluates the large-deviation
cost of density/current paths on a periodic grid, and solves the associated
variational problems (static profile optimization, traveling-wave scans for
dynamical phase transitions, finite-horizon path optimization).
"""

__version__ = "0.1.0"

from .lattice import (
    TorusGrid,
    TransportCoefficients,
    LatticeState,
    make_torus,
    coefficients_for,
    random_state,
)
from .dynamics import (
    JumpEvent,
    CurrentLedger,
    DriftField,
    simulate_exclusion,
    simulate_kmp,
    log_rn_derivative,
)
from .observables import (
    ScalarField,
    VectorField,
    TestFieldFamily,
    empirical_density,
    empirical_current,
    block_density,
    two_block_observable,
    current_metric,
    divergence_free_projection,
)
from .pde import (
    TimeGrid,
    PathDiscretization,
    solve_heat,
    solve_driven_parabolic,
    solve_continuity,
    solve_elliptic_chi,
)
from .functionals import (
    RateEvalReport,
    eval_JF,
    eval_I,
    eval_density_rate,
    gradient_form_path,
    static_integrand,
    entropy_Sm,
)
from .variational import (
    ProfileOptimizationResult,
    PathOptimizationResult,
    ScanRow,
    PhaseScanResult,
    minimize_Um,
    closed_form_Um_1d,
    eval_Psi_v,
    second_derivative_criterion,
    phase_transition_scan,
    optimize_PhiT,
    build_relaxation_path,
    build_straight_path,
    traveling_wave_path,
    glue_paths,
)

__all__ = [
    "TorusGrid",
    "TransportCoefficients",
    "LatticeState",
    "make_torus",
    "coefficients_for",
    "random_state",
    "JumpEvent",
    "CurrentLedger",
    "DriftField",
    "simulate_exclusion",
    "simulate_kmp",
    "log_rn_derivative",
    "ScalarField",
    "VectorField",
    "TestFieldFamily",
    "empirical_density",
    "empirical_current",
    "block_density",
    "two_block_observable",
    "current_metric",
    "divergence_free_projection",
    "TimeGrid",
    "PathDiscretization",
    "solve_heat",
    "solve_driven_parabolic",
    "solve_continuity",
    "solve_elliptic_chi",
    "RateEvalReport",
    "eval_JF",
    "eval_I",
    "eval_density_rate",
    "gradient_form_path",
    "static_integrand",
    "entropy_Sm",
    "ProfileOptimizationResult",
    "PathOptimizationResult",
    "ScanRow",
    "PhaseScanResult",
    "minimize_Um",
    "closed_form_Um_1d",
    "eval_Psi_v",
    "second_derivative_criterion",
    "phase_transition_scan",
    "optimize_PhiT",
    "build_relaxation_path",
    "build_straight_path",
    "traveling_wave_path",
    "glue_paths",
]
