"""Command line driver: reproducible experiments emitting versioned CSVs.

Every subcommand resolves one ExperimentConfig (file plus flag overrides),
writes its artifacts into the output directory, and writes a manifest
echoing the fully resolved configuration and the code version. Reruns with
the same manifest are byte identical: seeds are derived per replica from
the master seed, floats are written with repr, and nothing timestamps.

Replica sweeps fan out over a thread pool (the simulation kernels release
the GIL); all file writes happen in the main thread after collection.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from traceback import format_exception_only

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig
from .csvio import read_path_csv, write_csv, write_path_csv, write_report
from .dynamics import (
    DriftField,
    derive_replica_seed,
    log_rn_derivative,
    simulate_exclusion,
    simulate_kmp,
)
from .functionals import (
    FunctionalError,
    entropy_Sm,
    eval_I,
    eval_JF,
    eval_density_rate,
    static_integrand,
)
from .lattice import LatticeState, coefficients_for, make_torus, random_state
from .observables import (
    ScalarField,
    TestFieldFamily,
    VectorField,
    current_metric,
    divergence_free_projection,
    empirical_current,
    empirical_density,
    two_block_observable,
    block_density,
)
from .pde import (
    PDEError,
    PathDiscretization,
    grid_positions,
    solve_continuity,
    solve_driven_parabolic,
    solve_elliptic_chi,
    solve_heat,
)
from .variational import (
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

SUBCOMMANDS = (
    "simulate",
    "lln-check",
    "wasep-check",
    "rate-eval",
    "density-rate",
    "umin",
    "psi-scan",
    "phase-scan",
    "phi-path",
    "is-estimate",
    "selftest",
)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    handler = _HANDLERS[args.subcommand]
    try:
        return handler(cfg)
    except (ConfigError, FunctionalError, PDEError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fluctlab",
        description="current fluctuations in conservative lattice gases",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="experiment config file")
    common.add_argument("--seed", type=int, metavar="INT", help="override master seed")
    common.add_argument("--out", metavar="DIR", help="override output directory")
    common.add_argument("--threads", type=int, metavar="INT", help="override worker threads")
    subs = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        subs.add_parser(name, parents=[common], help=_HELP[name])
    return parser


_HELP = {
    "simulate": "run one lattice-gas trajectory, emit density and current fields",
    "lln-check": "compare empirical density/current against the heat equation",
    "wasep-check": "compare the driven gas against the driven parabolic PDE",
    "rate-eval": "evaluate the current rate functional on a path",
    "density-rate": "evaluate the density rate functional on a path",
    "umin": "minimize the static holding cost over fixed-mass profiles",
    "psi-scan": "traveling-wave cost over a grid of speeds at fixed current",
    "phase-scan": "flat cost vs best wave cost over a grid of currents",
    "phi-path": "optimize the finite-horizon path rate at fixed mean current",
    "is-estimate": "tilted-simulation estimate of the current rate",
    "selftest": "run the built-in consistency battery",
}


def _resolve_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    return cfg.apply_overrides(seed=args.seed, out=args.out, threads=args.threads)


def _outdir(cfg: ExperimentConfig) -> Path:
    p = Path(cfg.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _finish(cfg: ExperimentConfig, sub: str, outdir: Path, files) -> int:
    manifest = outdir / f"{sub}-manifest.ini"
    manifest.write_text(cfg.manifest_text(sub, __version__), encoding="ascii")
    for f in list(files) + [manifest]:
        print(f"wrote {f}")
    return 0


def _require_d1(cfg: ExperimentConfig, sub: str) -> None:
    if cfg.d != 1:
        raise ConfigError(f"{sub} is one dimensional; got d={cfg.d}")


def _initial_state(cfg: ExperimentConfig, grid, seed: int) -> LatticeState:
    kind = "energy" if cfg.model == "kmp" else "exclusion"
    return random_state(grid, cfg.profile_callable(), seed, kind)


def _report_pairs(rep) -> list:
    pairs = [
        ("functional", rep.functional),
        ("value", rep.value),
        ("slices", rep.slices),
        ("clamped_faces", rep.clamped_faces),
        ("continuity_residual", rep.continuity_residual),
        ("has_control", int(rep.control is not None)),
    ]
    for key in sorted(rep.terms):
        pairs.append((f"term_{key}", rep.terms[key]))
    return pairs


# ---------------------------------------------------------------------------
# simulation subcommands


def cmd_simulate(cfg: ExperimentConfig) -> int:
    outdir = _outdir(cfg)
    grid = make_torus(cfg.d, cfg.N)
    state = _initial_state(cfg, grid, derive_replica_seed(cfg.seed, 0))
    dyn_seed = derive_replica_seed(cfg.seed, 1)
    if cfg.model == "kmp":
        final, ledger = simulate_kmp(state, cfg.T, seed=dyn_seed)
    else:
        final, ledger = simulate_exclusion(state, cfg.T, field=cfg.drift_field(), seed=dyn_seed)
    M = min(cfg.M, cfg.N)
    dens = empirical_density(final, M).values
    curr = empirical_current(ledger, M=M).components
    meta = {"model": cfg.model, "N": cfg.N, "M": M, "T": cfg.T, "seed": cfg.seed}
    dens_file = outdir / "simulate-density.csv"
    coords = tuple(f"x{k}" for k in range(cfg.d))
    rows = [tuple(int(i) for i in idx) + (float(dens[idx]),) for idx in np.ndindex(dens.shape)]
    write_csv(dens_file, coords + ("value",), rows, meta)
    curr_file = outdir / "simulate-current.csv"
    rows = [
        (ax,) + tuple(int(i) for i in idx) + (float(curr[(ax,) + idx]),)
        for ax in range(cfg.d)
        for idx in np.ndindex(dens.shape)
    ]
    write_csv(curr_file, ("axis",) + coords + ("value",), rows, meta)
    return _finish(cfg, "simulate", outdir, [dens_file, curr_file])


def _lln_core(cfg: ExperimentConfig, sub: str) -> int:
    """Shared body of lln-check and wasep-check: replicas vs the PDE."""
    outdir = _outdir(cfg)
    family = TestFieldFamily(cfg.d, cfg.tests)
    drift = cfg.drift_field()
    P_micro = grid_positions(cfg.N, cfg.d)
    members = [family.evaluate(k, P_micro) for k in range(cfg.tests)]

    def worker(i: int):
        grid = make_torus(cfg.d, cfg.N)
        state = random_state(grid, cfg.profile_callable(), derive_replica_seed(cfg.seed, 2 * i), "exclusion")
        final, ledger = simulate_exclusion(state, cfg.T, field=drift,
                                           seed=derive_replica_seed(cfg.seed, 2 * i + 1))
        dens = empirical_density(final)
        curr = empirical_current(ledger)
        dp = np.array([dens.pair(F.sum(axis=0)) for F in members])
        cp = np.array([curr.pair(F) for F in members])
        return dp, cp

    with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
        results = list(ex.map(worker, range(cfg.replicas)))
    dens_emp = np.mean([r[0] for r in results], axis=0)
    curr_emp = np.mean([r[1] for r in results], axis=0)

    coeffs = cfg.coefficients()
    sol = solve_driven_parabolic(cfg.gamma(), cfg.field_callable(), coeffs, cfg.T,
                                 dt=cfg.dt or None)
    rho_T = ScalarField(sol.densities[-1])
    W_T = VectorField(sol.W_cumulative()[-1])
    P_macro = grid_positions(cfg.M, cfg.d)
    rows = []
    for k in range(cfg.tests):
        F = family.evaluate(k, P_macro)
        dpde = rho_T.pair(F.sum(axis=0))
        cpde = W_T.pair(F)
        rows.append((k, dens_emp[k], dpde, abs(dens_emp[k] - dpde),
                     curr_emp[k], cpde, abs(curr_emp[k] - cpde)))
    meta = {"model": cfg.model, "N": cfg.N, "M": cfg.M, "T": cfg.T,
            "replicas": cfg.replicas, "seed": cfg.seed, "field": cfg.field}
    out_file = outdir / f"{sub}.csv"
    write_csv(out_file,
              ("test", "density_emp", "density_pde", "density_err",
               "current_emp", "current_pde", "current_err"), rows, meta)
    return _finish(cfg, sub, outdir, [out_file])


def cmd_lln_check(cfg: ExperimentConfig) -> int:
    if cfg.model not in ("ssep", "wasep"):
        raise ConfigError("lln-check compares exclusion dynamics with the heat flow")
    if cfg.field != "none":
        raise ConfigError("lln-check is the zero-drive check; use wasep-check for drives")
    return _lln_core(cfg, "lln-check")


def cmd_wasep_check(cfg: ExperimentConfig) -> int:
    if cfg.model != "wasep":
        raise ConfigError("wasep-check needs model=wasep")
    if cfg.field == "none":
        raise ConfigError("wasep-check needs a drive; set field=sine or field=constant")
    return _lln_core(cfg, "wasep-check")


def cmd_is_estimate(cfg: ExperimentConfig) -> int:
    _require_d1(cfg, "is-estimate")
    if cfg.model not in ("ssep", "wasep"):
        raise ConfigError("is-estimate tilts exclusion dynamics; model must be ssep or wasep")
    if cfg.field != "constant" or cfg.E == 0.0:
        raise ConfigError("is-estimate needs field=constant with a nonzero E")
    outdir = _outdir(cfg)
    drift = cfg.drift_field()

    def worker(i: int):
        grid = make_torus(cfg.d, cfg.N)
        state = random_state(grid, cfg.profile_callable(), derive_replica_seed(cfg.seed, 2 * i), "exclusion")
        final, ledger = simulate_exclusion(state, cfg.T, field=drift,
                                           seed=derive_replica_seed(cfg.seed, 2 * i + 1),
                                           record_events=True)
        lr = log_rn_derivative(state, ledger, drift)
        jbar = float(empirical_current(ledger).components[0].mean()) / cfg.T
        return lr, jbar

    with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
        results = list(ex.map(worker, range(cfg.replicas)))
    rows = [(i, lr, jbar) for i, (lr, jbar) in enumerate(results)]
    out_file = outdir / "is-estimate.csv"
    meta = {"model": cfg.model, "N": cfg.N, "T": cfg.T, "E": cfg.E,
            "m": cfg.m, "replicas": cfg.replicas, "seed": cfg.seed}
    write_csv(out_file, ("replica", "log_rn", "jbar"), rows, meta)

    lrs = np.array([r[1] for r in rows])
    jbars = np.array([r[2] for r in rows])
    rate = float(lrs.mean()) / cfg.T
    jhat = float(jbars.mean())
    coeffs = cfg.coefficients()
    U = closed_form_Um_1d(jhat, cfg.m, coeffs)
    rel = abs(rate - U) / max(abs(U), 1e-300)
    summary = outdir / "is-estimate-summary.csv"
    write_report(summary, [
        ("rate_estimate", rate),
        ("jbar_mean", jhat),
        ("U_at_jbar", U),
        ("rel_deviation", rel),
        ("log_rn_mean", float(lrs.mean())),
        ("log_rn_std", float(lrs.std(ddof=1)) if len(rows) > 1 else 0.0),
    ], meta)
    return _finish(cfg, "is-estimate", outdir, [out_file, summary])


# ---------------------------------------------------------------------------
# functional subcommands


def _configured_path(cfg: ExperimentConfig) -> PathDiscretization:
    if cfg.path_in:
        return read_path_csv(cfg.path_in)
    return solve_driven_parabolic(cfg.gamma(), cfg.field_callable(), cfg.coefficients(),
                                  cfg.T, dt=cfg.dt or None)


def cmd_rate_eval(cfg: ExperimentConfig) -> int:
    outdir = _outdir(cfg)
    path = _configured_path(cfg)
    rep = eval_I(path, cfg.coefficients())
    out_file = outdir / "rate-eval.csv"
    meta = {"model": cfg.model, "M": path.M, "T": path.T, "path_in": cfg.path_in or "-"}
    write_report(out_file, _report_pairs(rep), meta)
    return _finish(cfg, "rate-eval", outdir, [out_file])


def cmd_density_rate(cfg: ExperimentConfig) -> int:
    outdir = _outdir(cfg)
    path = _configured_path(cfg)
    rep = eval_density_rate(path, cfg.coefficients())
    out_file = outdir / "density-rate.csv"
    meta = {"model": cfg.model, "M": path.M, "T": path.T, "path_in": cfg.path_in or "-"}
    write_report(out_file, _report_pairs(rep), meta)
    return _finish(cfg, "density-rate", outdir, [out_file])


# ---------------------------------------------------------------------------
# variational subcommands


def _profile_rows(values: np.ndarray) -> list:
    M = values.shape[0]
    return [(i, i / M, float(values[i])) for i in range(M)]


def cmd_umin(cfg: ExperimentConfig) -> int:
    _require_d1(cfg, "umin")
    outdir = _outdir(cfg)
    coeffs = cfg.coefficients()
    res = minimize_Um(cfg.J, cfg.m, coeffs, {"M": cfg.M, "seed": cfg.seed})
    pairs = [
        ("value", res.value),
        ("iterations", res.iterations),
        ("converged", int(res.converged)),
        ("gradient_norm", res.gradient_norm),
        ("start_index", res.start_index),
        ("clamps", res.clamps),
    ]
    if coeffs.reciprocal_chi_convex():
        pairs.append(("flat_closed_form", closed_form_Um_1d(cfg.J, cfg.m, coeffs)))
    meta = {"model": cfg.model, "m": cfg.m, "J": cfg.J, "M": cfg.M}
    out_file = outdir / "umin.csv"
    write_report(out_file, pairs, meta)
    prof_file = outdir / "umin-profile.csv"
    write_csv(prof_file, ("site", "u", "value"), _profile_rows(res.minimizer), meta)
    return _finish(cfg, "umin", outdir, [out_file, prof_file])


def cmd_psi_scan(cfg: ExperimentConfig) -> int:
    _require_d1(cfg, "psi-scan")
    outdir = _outdir(cfg)
    coeffs = cfg.coefficients()
    lam, _, _ = second_derivative_criterion(cfg.m, coeffs)
    vgrid = cfg.v_grid or tuple(np.linspace(0.0, max(4.0 * abs(lam), 1.0) * abs(cfg.J), 17))
    rows = []
    best = None
    warm = None
    for v in vgrid:
        opts = {"M": cfg.M, "seed": cfg.seed}
        if warm is not None:
            opts["extra_starts"] = [warm]
        res = eval_Psi_v(cfg.J, v, cfg.m, coeffs, opts)
        warm = res.minimizer
        rows.append((v, res.value, res.clamps, res.start_index, int(res.converged)))
        if best is None or res.value < best[1].value:
            best = (v, res)
    meta = {"model": cfg.model, "m": cfg.m, "J": cfg.J, "M": cfg.M, "seed": cfg.seed}
    if coeffs.reciprocal_chi_convex():
        meta["flat_cost"] = closed_form_Um_1d(cfg.J, cfg.m, coeffs)
    out_file = outdir / "psi-scan.csv"
    write_csv(out_file, ("v", "value", "clamps", "start_index", "converged"), rows, meta)
    prof_meta = dict(meta)
    prof_meta["v_star"] = best[0]
    prof_file = outdir / "psi-scan-profile.csv"
    write_csv(prof_file, ("site", "u", "value"), _profile_rows(best[1].minimizer), prof_meta)
    return _finish(cfg, "psi-scan", outdir, [out_file, prof_file])


def cmd_phase_scan(cfg: ExperimentConfig) -> int:
    _require_d1(cfg, "phase-scan")
    outdir = _outdir(cfg)
    coeffs = cfg.coefficients()
    Jgrid = cfg.J_grid or tuple(np.linspace(0.0, 20.0, 11))
    opts = {
        "M": cfg.M,
        "seed": cfg.seed,
        "find_jstar": cfg.find_jstar,
        "jstar_resolution": cfg.jstar_resolution,
        "jstar_rel_gap": cfg.jstar_rel_gap,
    }
    res = phase_transition_scan(cfg.m, Jgrid, coeffs, opts)
    rows = [(r.J, r.U, r.Psi_min, r.v_star, r.gap, r.clamps) for r in res.rows]
    meta = {"model": cfg.model, "m": cfg.m, "M": cfg.M, "seed": cfg.seed}
    if res.jstar is not None:
        meta["jstar"] = res.jstar
        meta["jstar_resolution"] = res.jstar_resolution
    out_file = outdir / "phase-scan.csv"
    write_csv(out_file, ("J", "U", "Psi_min", "v_star", "gap", "clamps"), rows, meta)
    return _finish(cfg, "phase-scan", outdir, [out_file])


def cmd_phi_path(cfg: ExperimentConfig) -> int:
    _require_d1(cfg, "phi-path")
    outdir = _outdir(cfg)
    coeffs = cfg.coefficients()
    gamma = cfg.gamma()
    horizons = cfg.T_grid or (cfg.T,)
    rows = []
    best = None
    for T in horizons:
        res = optimize_PhiT(cfg.J, gamma, float(T), cfg.K, coeffs)
        rows.append((float(T), cfg.K, res.value, res.iterations, int(res.converged)))
        if best is None or res.value < best.value:
            best = res
    meta = {"model": cfg.model, "m": cfg.m, "J": cfg.J, "M": cfg.M, "K": cfg.K}
    out_file = outdir / "phi-path.csv"
    write_csv(out_file, ("T", "K", "value", "iterations", "converged"), rows, meta)
    path_file = outdir / "phi-path-path.csv"
    write_path_csv(path_file, best.path)
    return _finish(cfg, "phi-path", outdir, [out_file, path_file])


# ---------------------------------------------------------------------------
# selftest battery

_SELFTESTS: list = []


def _selftest(name: str):
    def deco(fn):
        _SELFTESTS.append((name, fn))
        return fn

    return deco


def cmd_selftest(cfg: ExperimentConfig) -> int:
    failures = 0
    for name, fn in _SELFTESTS:
        try:
            fn()
        except Exception as exc:  # report and keep going
            detail = "".join(format_exception_only(type(exc), exc)).strip()
            print(f"FAIL {name}: {detail}")
            failures += 1
        else:
            print(f"PASS {name}")
    print(f"{len(_SELFTESTS) - failures}/{len(_SELFTESTS)} checks passed")
    return 1 if failures else 0


def _wave_profile(M: int = 32, m: float = 0.5, a: float = 0.2) -> np.ndarray:
    return m + a * np.cos(2.0 * np.pi * np.arange(M) / M)


@_selftest("torus-neighbors-invert")
def _t_torus_neighbors():
    grid = make_torus(2, 4)
    fwd, bwd = grid.forward_neighbors, grid.backward_neighbors
    for j in range(2):
        assert np.array_equal(bwd[fwd[:, j], j], np.arange(grid.sites))
        assert np.array_equal(fwd[bwd[:, j], j], np.arange(grid.sites))


@_selftest("torus-rejects-degenerate-ring")
def _t_torus_small():
    try:
        make_torus(1, 1)
    except ValueError:
        return
    raise AssertionError("a one-site ring has no distinct neighbors and must be refused")


@_selftest("mobility-vanishes-at-exclusion-endpoints")
def _t_chi_endpoints():
    chi = coefficients_for("ssep").chi
    assert float(chi(0.0)) == 0.0 and float(chi(1.0)) == 0.0


@_selftest("full-and-empty-states-are-frozen")
def _t_frozen_states():
    grid = make_torus(1, 16)
    for level in (0.0, 1.0):
        state = random_state(grid, level, seed=3)
        final, ledger = simulate_exclusion(state, 0.5, seed=4)
        assert np.array_equal(final.values, state.values)
        assert not ledger.W.any()


@_selftest("current-ledger-closes-conservation")
def _t_conservation():
    grid = make_torus(1, 32)
    state = random_state(grid, 0.5, seed=11)
    final, ledger = simulate_exclusion(state, 0.4, seed=12)
    assert ledger.conservation_residual(state, final) == 0.0


@_selftest("energy-chain-stays-nonnegative")
def _t_kmp_positive():
    grid = make_torus(1, 32)
    state = random_state(grid, 1.0, seed=5, kind="energy")
    final, ledger = simulate_kmp(state, 0.2, seed=6)
    assert float(final.values.min()) >= 0.0
    assert abs(final.values.sum() - state.values.sum()) <= 1e-9 * state.values.sum()


@_selftest("likelihood-ratio-vanishes-at-zero-tilt")
def _t_rn_zero():
    grid = make_torus(1, 16)
    state = random_state(grid, 0.5, seed=21)
    final, ledger = simulate_exclusion(state, 0.3, seed=22, record_events=True)
    assert log_rn_derivative(state, ledger, DriftField.constant(0.0)) == 0.0


@_selftest("two-way-tilting-never-gains-likelihood")
def _t_rn_concave():
    grid = make_torus(1, 16)
    state = random_state(grid, 0.5, seed=23)
    final, ledger = simulate_exclusion(state, 0.3, seed=24, record_events=True)
    up = log_rn_derivative(state, ledger, DriftField.constant(1.5))
    dn = log_rn_derivative(state, ledger, DriftField.constant(-1.5))
    assert up + dn < 0.0


@_selftest("empirical-density-reports-occupation")
def _t_density_atoms():
    grid = make_torus(1, 8)
    state = random_state(grid, 0.5, seed=9)
    assert np.array_equal(empirical_density(state).values, state.values.astype(float))


@_selftest("empirical-current-nets-out-round-trips")
def _t_current_netting():
    grid = make_torus(1, 8)
    state = random_state(grid, 0.5, seed=31)
    final, ledger = simulate_exclusion(state, 0.5, seed=32, record_events=True)
    replay = ledger.events.net_current_until(ledger.T, grid)
    assert np.array_equal(replay, ledger.W)


@_selftest("block-density-averages-the-window")
def _t_block_density():
    grid = make_torus(1, 8)
    state = LatticeState(grid, "exclusion", np.array([1, 0, 1, 1, 0, 0, 1, 0], dtype=np.int8))
    assert block_density(state, 2, 1) == (0 + 1 + 1) / 3


@_selftest("two-block-observable-vanishes-on-extremes")
def _t_two_block():
    grid = make_torus(1, 32)
    for level in (0.0, 1.0):
        state = random_state(grid, level, seed=2)
        assert two_block_observable(state, 0.1) == 0.0


@_selftest("current-metric-is-a-pseudometric")
def _t_metric():
    rng = np.random.default_rng(8)
    J1 = VectorField(rng.normal(size=(1, 16)))
    J2 = VectorField(rng.normal(size=(1, 16)))
    assert current_metric(J1, J1) == 0.0
    assert abs(current_metric(J1, J2) - current_metric(J2, J1)) <= 1e-15
    assert current_metric(J1, J2) <= 1.0


@_selftest("divergence-free-projection-is-a-projection")
def _t_projection():
    rng = np.random.default_rng(13)
    J = VectorField(rng.normal(size=(2, 8, 8)))
    P1 = divergence_free_projection(J)
    P2 = divergence_free_projection(P1)
    assert float(np.abs(P2.components - P1.components).max()) <= 1e-12
    const = VectorField(np.ones((2, 8, 8)))
    assert np.allclose(divergence_free_projection(const).components, 1.0, atol=1e-13)


@_selftest("heat-flow-fixes-constants")
def _t_heat_constant():
    sol = solve_heat(np.full(32, 0.5), 0.1)
    assert np.all(sol.densities == 0.5)
    assert not sol.increments.any()


@_selftest("driven-flow-at-zero-drive-is-heat-flow")
def _t_driven_matches_heat():
    gamma = _wave_profile()
    heat = solve_heat(gamma, 0.05)
    driven = solve_driven_parabolic(gamma, None, coefficients_for("ssep"), 0.05)
    assert np.array_equal(heat.densities, driven.densities)


@_selftest("flat-profile-rides-a-divergence-free-drive")
def _t_flat_stationary():
    sol = solve_driven_parabolic(np.full(32, 0.5), lambda t, P: np.full(P.shape[:-1] + (1,), 2.0),
                                 coefficients_for("ssep"), 0.1)
    assert np.allclose(sol.densities, 0.5, atol=1e-13)


@_selftest("continuity-with-zero-current-freezes")
def _t_continuity_zero():
    gamma = _wave_profile()
    times = np.linspace(0.0, 1.0, 9)
    path, flags = solve_continuity(gamma, np.zeros((8, 1, 32)), times)
    assert np.all(path.densities == gamma)
    assert flags.out_of_range_slices == 0


@_selftest("continuity-with-uniform-current-freezes")
def _t_continuity_divfree():
    gamma = _wave_profile()
    times = np.linspace(0.0, 1.0, 9)
    path, _ = solve_continuity(gamma, np.full((8, 1, 32), 0.7), times)
    assert np.allclose(path.densities, gamma, atol=1e-12)


@_selftest("continuity-conserves-mass")
def _t_continuity_mass():
    rng = np.random.default_rng(17)
    gamma = _wave_profile()
    times = np.linspace(0.0, 0.5, 17)
    path, _ = solve_continuity(gamma, rng.normal(size=(16, 1, 32)), times)
    assert path.mass_drift() <= 1e-13


@_selftest("weighted-poisson-zero-rhs-zero-gauge")
def _t_elliptic_zero():
    H, info = solve_elliptic_chi(_wave_profile(), np.zeros(32), coefficients_for("ssep"))
    assert not H.any()


@_selftest("weighted-poisson-rejects-unbalanced-rhs")
def _t_elliptic_unbalanced():
    try:
        solve_elliptic_chi(_wave_profile(), np.full(32, 0.1), coefficients_for("ssep"))
    except PDEError:
        return
    raise AssertionError("a source with net mass has no periodic solution and must be refused")


@_selftest("tilted-action-vanishes-at-zero-field")
def _t_jf_zero():
    sol = solve_heat(_wave_profile(), 0.05)
    assert eval_JF(sol, np.zeros((1, 32)), coefficients_for("ssep")) == 0.0


@_selftest("tilted-action-static-field-reconstruction")
def _t_jf_static():
    coeffs = coefficients_for("ssep")
    sol = solve_heat(_wave_profile(), 0.05)
    rng = np.random.default_rng(3)
    F = rng.normal(size=(1, 32))
    got = eval_JF(sol, F, coeffs)
    from .pde import div_b, face_average
    from .functionals import pair_faces

    terminal = pair_faces(sol.W_cumulative()[-1], F)
    divterm = quad = 0.0
    dts = sol.dts
    for k in range(sol.K):
        pik = sol.densities[k]
        divterm += 0.5 * float(dts[k]) * float(np.mean(pik * div_b(F)))
        quad += 0.5 * float(dts[k]) * pair_faces(np.asarray(coeffs.chi(face_average(pik))) * F, F)
    assert abs(got - (terminal - divterm - quad)) <= 1e-12


@_selftest("holding-cost-zero-at-flat-zero-current")
def _t_static_zero():
    assert static_integrand(np.full(32, 0.5), 0.0, coefficients_for("ssep")) == 0.0


@_selftest("entropy-vanishes-at-its-own-mean")
def _t_entropy_zero():
    assert entropy_Sm(np.full(32, 0.5), 0.5, coefficients_for("ssep")) == 0.0


@_selftest("rate-eval-rejects-broken-continuity")
def _t_rate_continuity():
    gamma = _wave_profile()
    times = np.linspace(0.0, 0.1, 5)
    densities = np.broadcast_to(gamma, (5, 32)).copy()
    increments = np.full((4, 1, 32), 1.0)
    increments[:, 0, ::2] = -1.0  # nonzero divergence, frozen densities
    bad = PathDiscretization(times, densities, increments)
    try:
        eval_I(bad, coefficients_for("ssep"))
    except FunctionalError:
        return
    raise AssertionError("continuity violation must be refused")


@_selftest("holding-zero-current-is-free")
def _t_um_zero():
    res = minimize_Um(0.0, 0.5, coefficients_for("ssep"), {"M": 32})
    assert res.value == 0.0
    assert np.all(res.minimizer == 0.5)


@_selftest("wave-cost-never-beats-the-flat-bound")
def _t_psi_bound():
    coeffs = coefficients_for("kmp")
    res = eval_Psi_v(2.0, 3.0, 1.0, coeffs, {"M": 32})
    assert res.value <= 2.0**2 / (2.0 * float(coeffs.chi(1.0))) + 1e-12


@_selftest("zero-speed-wave-matches-static-holding")
def _t_psi_v0():
    coeffs = coefficients_for("ssep")
    a = eval_Psi_v(0.5, 0.0, 0.5, coeffs, {"M": 32})
    b = minimize_Um(0.5, 0.5, coeffs, {"M": 32})
    assert abs(a.value - b.value) <= 1e-12


@_selftest("gluing-a-still-segment-keeps-cost")
def _t_glue_still():
    coeffs = coefficients_for("kmp")
    wave = traveling_wave_path(_wave_profile(32, 1.0, 0.3), 2.0, 1.0)
    still = PathDiscretization(np.linspace(0.0, 0.2, 5),
                               np.broadcast_to(wave.densities[-1], (5, 32)).copy(),
                               np.zeros((4, 1, 32)))
    glued = glue_paths(wave, still)
    i_wave = eval_I(wave, coeffs, keep_control=False).value
    i_still = eval_I(still, coeffs, keep_control=False).value
    i_glued = eval_I(glued, coeffs, keep_control=False).value
    assert abs(i_glued - i_wave - i_still) <= 1e-10


@_selftest("gluing-accumulates-the-endpoint")
def _t_glue_endpoint():
    wave = traveling_wave_path(_wave_profile(32, 1.0, 0.3), 2.0, 1.0)
    glued = glue_paths(wave, wave)
    assert np.allclose(glued.W_total(), 2.0 * wave.W_total(), atol=1e-13)


@_selftest("straight-path-between-equal-profiles-skips-ramps")
def _t_straight_degenerate():
    rho = _wave_profile()
    p = build_straight_path(rho, rho, 0.5, 4.0)
    assert not p.increments[:64].any()
    assert not p.increments[-64:].any()


@_selftest("flat-wave-is-plain-uniform-drive")
def _t_wave_flat():
    p = traveling_wave_path(np.full(32, 0.5), 2.0, 1.0)
    assert np.all(p.increments == 1.0)
    assert np.all(p.densities == 0.5)


@_selftest("phase-scan-idles-at-zero-current")
def _t_scan_zero():
    res = phase_transition_scan(0.5, [0.0], coefficients_for("ssep"), {"M": 32})
    row = res.rows[0]
    assert row.U == 0.0 and row.Psi_min == 0.0 and row.gap == 0.0 and row.v_star == 0.0


@_selftest("path-rate-zero-at-zero-target-current")
def _t_phit_zero():
    res = optimize_PhiT(0.0, np.full(32, 0.5), 0.5, 8, coefficients_for("ssep"))
    assert res.value == 0.0


@_selftest("relaxation-path-noop-stays-under-entropy")
def _t_relax_noop():
    gamma = np.full(32, 0.5)
    coeffs = coefficients_for("ssep")
    path = build_relaxation_path(gamma, gamma, 0.5, 1e-6, coeffs)
    assert eval_I(path, coeffs, keep_control=False).value <= 1e-6


_HANDLERS = {
    "simulate": cmd_simulate,
    "lln-check": cmd_lln_check,
    "wasep-check": cmd_wasep_check,
    "rate-eval": cmd_rate_eval,
    "density-rate": cmd_density_rate,
    "umin": cmd_umin,
    "psi-scan": cmd_psi_scan,
    "phase-scan": cmd_phase_scan,
    "phi-path": cmd_phi_path,
    "is-estimate": cmd_is_estimate,
    "selftest": cmd_selftest,
}


if __name__ == "__main__":
    sys.exit(main())
