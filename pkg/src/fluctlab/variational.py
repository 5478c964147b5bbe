"""Macroscopic variational problems for steady current fluctuations.

Two families of objects live here. Profile problems minimize a static
cost over density profiles of fixed mass: U_m (cost of holding a constant
current on a frozen profile) and Psi_v (cost per period of a profile
traveling at speed v). Path problems optimize or construct full
space-time paths: the finite-horizon constrained rate Phi_T, the straight
path realizing the long-time limit, the relaxation path bounding costs by
the equilibrium entropy, and traveling-wave paths.

The profile optimizer is projected gradient descent: the feasible set
{mass = m} intersected with the admissible box is an affine slice of a
box, so the Euclidean projection is a scalar shift followed by clipping
(water filling) and is exact. Multi-start with cosine perturbations
guards against the constant profile being a saddle, which is exactly the
regime where the phase transition lives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .functionals import entropy_Sm, eval_I, gradient_form_path
from .observables import VectorField, divergence_free_projection
from .pde import (
    PathDiscretization,
    div_b,
    face_average,
    grad_f,
    poisson_periodic,
    solve_driven_parabolic,
)

__all__ = [
    "VariationalError",
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
    "build_straight_path",
    "build_relaxation_path",
    "traveling_wave_path",
    "glue_paths",
]


class VariationalError(RuntimeError):
    """Inputs outside the domain of a variational problem, or an
    unreachable requested bound."""


@dataclass
class ProfileOptimizationResult:
    """Outcome of a profile minimization over the mass-m slice.

    ``start_index`` identifies the winning start in the multi-start
    battery (0 is the constant profile); ``clamps`` counts faces of the
    minimizer where the mobility sat below the clamping floor.
    """

    minimizer: np.ndarray
    value: float
    iterations: int
    converged: bool
    gradient_norm: float
    start_index: int = 0
    clamps: int = 0


@dataclass
class PathOptimizationResult:
    """Optimized path with its per-unit-time cost and loop diagnostics."""

    path: PathDiscretization
    value: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# projection and descent machinery


def _shrunk_box(coeffs) -> tuple[float, float]:
    # admissible interval pulled in by a fixed margin; infinite ends stay put
    lo, hi = coeffs.interval
    lo = lo + 1e-6 if math.isfinite(lo) else lo
    hi = hi - 1e-6 if math.isfinite(hi) else hi
    return float(lo), float(hi)


def _project_mass_box(x: np.ndarray, m: float, lo: float, hi: float) -> np.ndarray:
    """Euclidean projection onto {mean = m} intersected with [lo, hi].

    The projection is clip(x + shift, lo, hi) with the scalar shift fixed
    by the mass constraint; the clipped mean is monotone in the shift, so
    bisection finds it. Unclipped coordinates get a final exact correction
    so the mean holds to rounding, not bisection, precision.
    """
    x = np.asarray(x, dtype=float)
    a = (lo if math.isfinite(lo) else min(m, float(x.min()))) - float(x.max()) - 1.0
    if math.isfinite(hi):
        b = hi - float(x.min()) + 1.0
    else:
        b = max(m - float(x.mean()), 0.0) + 1.0
    for _ in range(200):
        mid = 0.5 * (a + b)
        if float(np.clip(x + mid, lo, hi).mean()) < m:
            a = mid
        else:
            b = mid
        if b - a <= 1e-16 * (1.0 + abs(a) + abs(b)):
            break
    y = np.clip(x + 0.5 * (a + b), lo, hi)
    free = (y > lo) & (y < hi)
    n_free = int(np.count_nonzero(free))
    if n_free:
        y[free] += (m - float(y.mean())) * y.size / n_free
    return y


def _pgd(x0, m, lo, hi, value_grad, max_iter: int, gtol: float):
    """Projected gradient descent with backtracking line search.

    Acceptance is the standard sufficient-decrease test along the
    projection arc; the step grows after accepted iterations. Returns
    (x, f, iterations, converged, projected gradient sup-norm).
    """
    x = _project_mass_box(x0, m, lo, hi)
    f, g = value_grad(x)
    step = 1.0
    it = 0
    for it in range(1, max_iter + 1):
        accepted = False
        fn = f
        gn = g
        xn = x
        for _ in range(50):
            xn = _project_mass_box(x - step * g, m, lo, hi)
            dx = xn - x
            dec = float((dx * dx).sum())
            if dec == 0.0:
                break
            fn, gn = value_grad(xn)
            if fn <= f - 1e-4 * dec / step:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        x, f, g = xn, fn, gn
        step = min(step * 1.5, 1e8)
        pg = x - _project_mass_box(x - g, m, lo, hi)
        if float(np.abs(pg).max()) <= gtol:
            break
    pg = x - _project_mass_box(x - g, m, lo, hi)
    gnorm = float(np.abs(pg).max())
    return x, float(f), it, gnorm <= gtol, gnorm


def _start_battery(m: float, shape: tuple, rng: np.random.Generator) -> list:
    """Constant profile plus cosine perturbations along the first axis.

    Amplitudes 0.05/0.1/0.2 at frequencies 1 and 2, plus two random-phase
    waves at the largest amplitude. Starts may leave the admissible box;
    the optimizer projects them before the first step.
    """
    M = shape[0]
    u = np.arange(M) / M
    tail = (1,) * (len(shape) - 1)
    starts = [np.full(shape, float(m))]
    for amp in (0.05, 0.1, 0.2):
        for freq in (1, 2):
            wave = amp * np.cos(2.0 * np.pi * freq * u)
            starts.append(m + wave.reshape((M,) + tail) * np.ones(shape))
    for freq in (1, 2):
        wave = 0.2 * np.cos(2.0 * np.pi * freq * u + rng.uniform(0.0, 2.0 * np.pi))
        starts.append(m + wave.reshape((M,) + tail) * np.ones(shape))
    return starts


def _current_faces(j, M: int | None, d: int | None = None) -> np.ndarray:
    """Scalar, constant-vector, or explicit face-field current to faces.

    A scalar is one dimensional; a 1-dim array of length d is the constant
    vector with those components; anything else must already be a face
    field of shape (d,) + (M,)*d.
    """
    j = np.asarray(j, dtype=float)
    if j.ndim == 0:
        if d not in (None, 1):
            raise VariationalError("scalar current only makes sense in one dimension")
        M = 64 if M is None else int(M)
        return np.full((1, M), float(j))
    if j.ndim == 1:
        dd = j.shape[0]
        if d is not None and dd != d:
            raise VariationalError(f"constant current has {dd} components, expected {d}")
        M = 64 if M is None else int(M)
        out = np.empty((dd,) + (M,) * dd)
        for k in range(dd):
            out[k] = j[k]
        return out
    if j.ndim != j.shape[0] + 1:
        raise VariationalError(f"current shape {j.shape} is not (d,) + (M,)*d")
    return j


def _is_divergence_free(jfaces: np.ndarray, tol: float = 1e-8) -> bool:
    # fixed point of the spectral projection, relative to the field scale
    proj = divergence_free_projection(VectorField(jfaces))
    scale = float(np.abs(jfaces).max()) + 1.0
    return float(np.abs(proj.components - jfaces).max()) <= tol * scale


def _clamp_count(rho: np.ndarray, coeffs, eps_chi: float) -> int:
    chif = np.asarray(coeffs.chi(face_average(rho)), dtype=float)
    return int(np.count_nonzero(chif < eps_chi))


# ---------------------------------------------------------------------------
# static profile problems


def _um_value_grad(rho, jfaces, coeffs, eps_chi):
    """Value and per-site gradient of the static holding cost.

    f = (1/2)<r, r/chi> with r = j + (1/2) grad d(rho) and chi at face
    averages. The r-dependence differentiates through the exact adjoint of
    the forward gradient; the chi-dependence splits its face weight onto
    the two endpoint sites. Faces clamped at eps_chi contribute no
    mobility derivative.
    """
    sites = rho.size
    d = rho.ndim
    sigma = face_average(rho)
    chi_raw = np.asarray(coeffs.chi(sigma), dtype=float)
    chif = np.maximum(chi_raw, eps_chi)
    r = jfaces + 0.5 * grad_f(np.asarray(coeffs.antiderivative_D(rho), dtype=float))
    q = r / chif
    value = 0.5 * float((r * q).sum()) / sites
    cp = np.where(chi_raw >= eps_chi, np.asarray(coeffs.chi_prime(sigma), dtype=float), 0.0)
    c = q * q * cp
    g = -0.5 * np.asarray(coeffs.D(rho), dtype=float) * div_b(q)
    for ax in range(d):
        g = g - 0.25 * (c[ax] + np.roll(c[ax], 1, axis=ax))
    return value, g / sites


def _psi_value_grad(rho, J, v, m, coeffs, eps_chi):
    """Value and gradient of the traveling-wave integrand at speed v.

    s = J + v (rho(u + b) - m) + (1/2) grad d(rho) with b picking the
    downwind node (right for v < 0), the choice that makes the discrete
    wave path exactly continuous. d = 1 only.
    """
    M = rho.size
    b = 1 if v < 0 else 0
    sigma = face_average(rho)
    chi_raw = np.asarray(coeffs.chi(sigma), dtype=float)
    chif = np.maximum(chi_raw, eps_chi)
    s = J + v * (np.roll(rho, -b) - m)[None, :] + 0.5 * grad_f(
        np.asarray(coeffs.antiderivative_D(rho), dtype=float)
    )
    q = s / chif
    value = 0.5 * float((s * q).sum()) / M
    cp = np.where(chi_raw >= eps_chi, np.asarray(coeffs.chi_prime(sigma), dtype=float), 0.0)
    c = (q * q * cp)[0]
    g = v * np.roll(q[0], b) - 0.5 * np.asarray(coeffs.D(rho), dtype=float) * div_b(q)
    g = g - 0.25 * (c + np.roll(c, 1))
    return value, g / M


def _multi_start_minimize(objective, m, coeffs, shape, opts) -> ProfileOptimizationResult:
    eps_chi = float(opts.get("eps_chi", 1e-10))
    max_iter = int(opts.get("max_iter", 400))
    gtol = float(opts.get("gtol", 1e-8))
    rng = np.random.default_rng(int(opts.get("seed", 0)))
    lo, hi = _shrunk_box(coeffs)
    starts = _start_battery(m, shape, rng)
    for extra in opts.get("extra_starts", ()):  # warm starts rank after the battery
        starts.append(np.asarray(extra, dtype=float).reshape(shape))
    best: ProfileOptimizationResult | None = None
    total_iters = 0
    for idx, s0 in enumerate(starts):
        x, f, its, conv, gn = _pgd(s0, m, lo, hi, objective, max_iter, gtol)
        total_iters += its
        if best is None or f < best.value:
            best = ProfileOptimizationResult(x, f, its, conv, gn, start_index=idx)
    assert best is not None
    best.iterations = total_iters
    best.clamps = _clamp_count(best.minimizer, coeffs, eps_chi)
    return best


def minimize_Um(j, m: float, coeffs, opts: dict | None = None) -> ProfileOptimizationResult:
    """Cheapest mass-m profile holding the constant current j forever.

    Minimizes (1/2)<[j + (1/2) grad d(rho)], (1/chi(rho)) [...]> over
    profiles of mass m in the admissible box. j must be divergence free;
    otherwise the value is declared infinite (no profile can hold it) and
    the constant profile is returned untouched.

    opts keys: M (grid for scalar/constant j, default 64), seed, max_iter,
    gtol, eps_chi, extra_starts (profiles appended to the battery).
    """
    opts = dict(opts or {})
    jfaces = _current_faces(j, opts.get("M"))
    d = jfaces.shape[0]
    shape = jfaces.shape[1:]
    if not (coeffs.interval[0] < m < coeffs.interval[1]):
        raise VariationalError(f"mass {m} outside the admissible interval")
    if not _is_divergence_free(jfaces):
        return ProfileOptimizationResult(
            minimizer=np.full(shape, float(m)),
            value=float("inf"),
            iterations=0,
            converged=True,
            gradient_norm=0.0,
        )
    eps_chi = float(opts.get("eps_chi", 1e-10))

    def objective(rho):
        return _um_value_grad(rho, jfaces, coeffs, eps_chi)

    del d
    return _multi_start_minimize(objective, m, coeffs, shape, opts)


def closed_form_Um_1d(j: float, m: float, coeffs) -> float:
    """j^2 / (2 chi(m)): the one-dimensional holding cost in closed form.

    Valid exactly when 1/chi is convex on the admissible interval (then
    the constant profile is the global minimizer); refused otherwise
    because the formula is not guaranteed.
    """
    if not coeffs.reciprocal_chi_convex():
        raise VariationalError(
            f"1/chi is not convex for model {coeffs.name!r}; "
            "the constant-profile formula is not guaranteed, use minimize_Um"
        )
    chi = float(coeffs.chi(m))
    if chi <= 0.0:
        raise VariationalError(f"chi({m}) = {chi:g} is not positive")
    return float(j) ** 2 / (2.0 * chi)


def eval_Psi_v(J: float, v: float, m: float, coeffs, opts: dict | None = None) -> ProfileOptimizationResult:
    """Optimal profile cost for carrying mean current J as a wave at speed v.

    Minimizes (1/2) int {J + v[rho(u) - m] + (1/2) grad d(rho)}^2 / chi(rho)
    over mass-m profiles (d = 1). At v = 0 this is minimize_Um; the
    constant profile always gives J^2/(2 chi(m)), so the value never
    exceeds that bound. opts as in minimize_Um.
    """
    opts = dict(opts or {})
    M = int(opts.get("M", 64))
    if not (coeffs.interval[0] < m < coeffs.interval[1]):
        raise VariationalError(f"mass {m} outside the admissible interval")
    eps_chi = float(opts.get("eps_chi", 1e-10))

    def objective(rho):
        return _psi_value_grad(rho, float(J), float(v), float(m), coeffs, eps_chi)

    return _multi_start_minimize(objective, m, coeffs, (M,), opts)


def second_derivative_criterion(m: float, coeffs) -> tuple[float, float, bool]:
    """Local stability of the constant profile against slow waves.

    Evaluates F''(m) for F(r) = (1 + lambda (r - m))^2 / chi(r) at the
    critical coupling lambda* = chi'(m)/chi(m), where the quadratic in
    lambda is minimized. Returns (lambda*, F''(m), F''(m) < 0). A negative
    value means mass rearrangement lowers the traveling-wave cost, so a
    dynamical phase transition is possible at large currents.
    """
    chi = float(coeffs.chi(m))
    if chi <= 0.0:
        raise VariationalError(f"chi({m}) = {chi:g} is not positive")
    cp = float(coeffs.chi_prime(m))
    cpp = float(coeffs.chi_dprime(m))
    lam = cp / chi
    fpp = (2.0 * chi**2 * lam**2 - 4.0 * chi * cp * lam + 2.0 * cp**2 - chi * cpp) / chi**3
    return lam, fpp, bool(fpp < 0.0)


# ---------------------------------------------------------------------------
# phase transition scan


@dataclass
class ScanRow:
    """One line of the phase diagram: holding cost vs best wave cost."""

    J: float
    U: float
    Psi_min: float
    v_star: float
    gap: float
    clamps: int


@dataclass
class PhaseScanResult:
    rows: list
    jstar: float | None = None
    jstar_resolution: float = float("nan")


def _golden_min(fn, a: float, b: float, tol: float):
    """Golden-section minimum of a scalar function on [a, b]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fn(d)
    return (c, fc) if fc <= fd else (d, fd)


def phase_transition_scan(m: float, J_grid, coeffs, opts: dict | None = None) -> PhaseScanResult:
    """Compare U(J) with min over v of Psi_v(J) along a grid of currents.

    For each J the flat-profile cost U comes from the closed form when
    1/chi is convex (both built-in models) and from minimize_Um otherwise.
    The wave side minimizes over v by golden section on [0, max(4 lambda*, 1) J],
    seeded at lambda* J and warm-started from the previous minimizer. A
    positive gap = U - Psi_min certifies that the constant profile loses.

    opts keys: those of eval_Psi_v, plus v_tol (golden-section width),
    find_jstar (bisect the first crossing of jstar_rel_gap, default off),
    jstar_resolution, jstar_rel_gap.
    """
    opts = dict(opts or {})
    v_tol = float(opts.get("v_tol", 1e-3))
    lam, _, _ = second_derivative_criterion(m, coeffs)
    use_closed = coeffs.reciprocal_chi_convex()
    warm: dict = {"profile": None}

    def U_of(J: float) -> float:
        if use_closed:
            return closed_form_Um_1d(J, m, coeffs)
        return minimize_Um(J, m, coeffs, opts).value

    def psi_of(J: float, v: float) -> ProfileOptimizationResult:
        local = dict(opts)
        extra = list(local.get("extra_starts", ()))
        if warm["profile"] is not None:
            extra.append(warm["profile"])
        local["extra_starts"] = extra
        res = eval_Psi_v(J, v, m, coeffs, local)
        warm["profile"] = res.minimizer
        return res

    def wave_min(J: float):
        # golden section over v with explicit v = 0 and v = lambda* J probes
        if J == 0.0:
            return psi_of(0.0, 0.0), 0.0
        vmax = max(4.0 * abs(lam), 1.0) * abs(J)
        cache: dict = {}

        def fn(v: float) -> float:
            res = psi_of(J, v)
            cache[v] = res
            return res.value

        candidates = [(0.0, fn(0.0))]
        seed = lam * J
        if 0.0 < seed < vmax:
            candidates.append((seed, fn(seed)))
        candidates.append(_golden_min(fn, 0.0, vmax, max(v_tol, v_tol * vmax)))
        v_best, val_best = candidates[0]
        for v, val in candidates[1:]:
            if val < val_best:
                v_best, val_best = v, val
        return cache[v_best], v_best

    def row_of(J: float) -> ScanRow:
        U = U_of(J)
        res, v_star = wave_min(J)
        return ScanRow(J=float(J), U=U, Psi_min=res.value, v_star=float(v_star),
                       gap=U - res.value, clamps=res.clamps)

    rows = [row_of(float(J)) for J in np.asarray(J_grid, dtype=float)]

    jstar = None
    resolution = float(opts.get("jstar_resolution", 0.05))
    if opts.get("find_jstar", False):
        rel_thr = float(opts.get("jstar_rel_gap", 1e-3))

        def crossed(row: ScanRow) -> bool:
            return row.U > 0.0 and row.gap / row.U > rel_thr

        for lo_row, hi_row in zip(rows, rows[1:]):
            if not crossed(lo_row) and crossed(hi_row):
                a, b = lo_row.J, hi_row.J
                while b - a > resolution:
                    mid = 0.5 * (a + b)
                    if crossed(row_of(mid)):
                        b = mid
                    else:
                        a = mid
                jstar = 0.5 * (a + b)
                break

    return PhaseScanResult(rows=rows, jstar=jstar, jstar_resolution=resolution)


# ---------------------------------------------------------------------------
# path optimization


def optimize_PhiT(J, gamma, T: float, K: int, coeffs, opts: dict | None = None) -> PathOptimizationResult:
    """Minimize the path rate over currents with time average J.

    Alternating scheme: with mobility and drift frozen at the current
    densities, the quadratic cost under the affine endpoint constraint
    sum_k dt w_k = T J splits per face and is solved exactly by one
    Lagrange multiplier per face; densities are then rebuilt from the new
    currents through continuity and the coefficients refreshed. The true
    (unfrozen) cost is tracked every sweep and the best iterate kept, so
    the reported value is always achieved by the reported path.

    A non-divergence-free J cannot be the time average of any current
    reaching a bounded density, so the value is declared infinite and the
    returned path is the untouched initial guess.

    Two starts always run: the constant current w = J (which holds the
    initial profile and is already the exact optimum when gamma is flat)
    and the free relaxation of gamma resampled to the optimizer grid,
    which after one constrained sweep becomes a relax-then-carry path and
    wins whenever holding gamma is expensive. The constant start is a
    fixed point of the sweep, so without the second start the scheme
    could never leave it.

    opts keys: eps_chi, max_outer (default 60), outer_tol (relative cost
    change, default 1e-12), extra_inits (list of PathDiscretization on the
    same time grid whose increments seed extra optimization runs).
    """
    opts = dict(opts or {})
    gamma = np.asarray(gamma, dtype=float)
    d = gamma.ndim
    M = gamma.shape[0]
    K = int(K)
    if K < 2:
        raise VariationalError("need at least 2 time steps for a constrained path")
    jfaces = _current_faces(J, M, d)
    if jfaces.shape[1:] != gamma.shape:
        raise VariationalError("current and profile grids differ")
    dt = float(T) / K
    times = np.arange(K + 1) * dt
    eps_chi = float(opts.get("eps_chi", 1e-10))
    max_outer = int(opts.get("max_outer", 60))
    outer_tol = float(opts.get("outer_tol", 1e-12))

    w0 = np.broadcast_to(jfaces, (K,) + jfaces.shape).copy()
    if not _is_divergence_free(jfaces):
        path = PathDiscretization(times, _densities_of(w0, gamma, dt), w0)
        return PathOptimizationResult(path=path, value=float("inf"), iterations=0,
                                      converged=True, history=[])

    inits = [w0, _hydro_slice_init(gamma, K, dt, coeffs)]
    for extra in opts.get("extra_inits", ()):
        if extra.K != K or extra.densities.shape[1:] != gamma.shape:
            raise VariationalError("extra init path lives on a different grid")
        if abs(extra.T - float(T)) > 1e-9 * (1.0 + abs(T)):
            raise VariationalError("extra init path has a different horizon")
        inits.append(np.array(extra.increments, dtype=float))

    target = float(T) * jfaces
    feas_tol = 1e-8 * (1.0 + float(np.abs(target).max()))

    def solve_frozen(dens: np.ndarray) -> np.ndarray:
        # exact minimizer of the frozen quadratic under the endpoint constraint
        chib = np.empty((K,) + jfaces.shape)
        wdot = np.empty_like(chib)
        for k in range(K):
            pik = dens[k]
            chib[k] = np.maximum(np.asarray(coeffs.chi(face_average(pik)), dtype=float), eps_chi)
            wdot[k] = -0.5 * grad_f(np.asarray(coeffs.antiderivative_D(pik), dtype=float))
        mu = (target - dt * wdot.sum(axis=0)) / (dt * chib.sum(axis=0))
        return wdot + chib * mu[None]

    best_w: np.ndarray | None = None
    best_cost = float("inf")
    best_conv = False
    history: list = []
    iterations = 0
    for w_init in inits:
        w = w_init
        feasible = float(np.abs(dt * w.sum(axis=0) - target).max()) <= feas_tol
        cost = _path_cost(_densities_of(w, gamma, dt), w, dt, coeffs, eps_chi) if feasible else float("inf")
        if feasible:
            history.append(cost)
        run_conv = False
        for _ in range(max_outer):
            iterations += 1
            w_prop = solve_frozen(_densities_of(w, gamma, dt))
            if not feasible:
                # one full sweep restores the endpoint; damping starts after
                w = w_prop
                feasible = True
                cost = _path_cost(_densities_of(w, gamma, dt), w, dt, coeffs, eps_chi)
                history.append(cost)
                continue
            if float(np.abs(w_prop - w).max()) <= outer_tol * (1.0 + float(np.abs(w).max())):
                run_conv = True
                break
            # damped update: blends of feasible currents stay feasible, and
            # shrinking theta rejects sweeps destabilized by the refreeze
            accepted = False
            theta = 1.0
            c_try = cost
            w_try = w
            for _ in range(12):
                w_try = w + theta * (w_prop - w)
                c_try = _path_cost(_densities_of(w_try, gamma, dt), w_try, dt, coeffs, eps_chi)
                if c_try < cost:
                    accepted = True
                    break
                theta *= 0.5
            if not accepted:
                run_conv = True
                break
            prev, w, cost = cost, w_try, c_try
            history.append(cost)
            if abs(prev - cost) <= outer_tol * (1.0 + abs(cost)):
                run_conv = True
                break
        if cost < best_cost:
            best_cost, best_w, best_conv = cost, w, run_conv
    assert best_w is not None
    path = PathDiscretization(times, _densities_of(best_w, gamma, dt), best_w)
    return PathOptimizationResult(path=path, value=best_cost / float(T),
                                  iterations=iterations, converged=best_conv,
                                  history=history)


def _hydro_slice_init(gamma: np.ndarray, K: int, dt: float, coeffs) -> np.ndarray:
    """Free-relaxation increments averaged onto K uniform slices.

    Each slice is integrated at the stable fine step and its increments
    time-averaged, which keeps the coarse continuity identity exact: the
    averaged current moves exactly the mass the fine path moved.
    """
    w = np.empty((K,) + (gamma.ndim,) + gamma.shape)
    pi = gamma
    for k in range(K):
        fine = solve_driven_parabolic(pi, None, coeffs, dt)
        w[k] = fine.W_total() / dt
        pi = fine.densities[-1]
    return w


def _densities_of(w: np.ndarray, gamma: np.ndarray, dt: float) -> np.ndarray:
    K = w.shape[0]
    dens = np.empty((K + 1,) + gamma.shape)
    dens[0] = gamma
    pi = gamma.astype(float, copy=True)
    for k in range(K):
        pi = pi - dt * div_b(w[k])
        dens[k + 1] = pi
    return dens


def _path_cost(dens: np.ndarray, w: np.ndarray, dt: float, coeffs, eps_chi: float) -> float:
    # same quadrature as the rate evaluator, without building a path object
    K = w.shape[0]
    sites = dens[0].size
    total = 0.0
    for k in range(K):
        pik = dens[k]
        chif = np.maximum(np.asarray(coeffs.chi(face_average(pik)), dtype=float), eps_chi)
        excess = w[k] + 0.5 * grad_f(np.asarray(coeffs.antiderivative_D(pik), dtype=float))
        total += 0.5 * dt * float((excess * excess / chif).sum()) / sites
    return total


# ---------------------------------------------------------------------------
# explicit path constructions


def build_straight_path(gamma, rho, j, T: float, ramp_steps: int = 64,
                        middle_steps: int | None = None) -> PathDiscretization:
    """Move mass from gamma to rho, hold rho while driving j, move back.

    Three pieces: a unit-time ramp carrying the correction current whose
    divergence is gamma - rho, a long middle piece holding rho with the
    divergence-free part of j scaled by T/(T-2), and the reversed ramp.
    The endpoint is exactly T times the divergence-free part of j. The
    construction is model independent; only its cost depends on the
    transport coefficients.
    """
    gamma = np.asarray(gamma, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if gamma.shape != rho.shape:
        raise VariationalError("profile grids differ")
    if not T > 2.0:
        raise VariationalError(f"need T > 2 to fit the two unit ramps, got {T}")
    if abs(float(gamma.mean()) - float(rho.mean())) > 1e-10:
        raise VariationalError("profiles have different masses; no correction current exists")
    d = gamma.ndim
    M = gamma.shape[0]
    jfaces = _current_faces(j, M, d)
    jtilde = jfaces - grad_f(poisson_periodic(div_b(jfaces)))
    what = grad_f(poisson_periodic(gamma - rho))
    K1 = int(ramp_steps)
    K2 = int(middle_steps) if middle_steps is not None else max(1, math.ceil(4.0 * (T - 2.0)))
    scale = T / (T - 2.0)

    tA = np.linspace(0.0, 1.0, K1 + 1)
    tB = np.linspace(1.0, T - 1.0, K2 + 1)
    tC = np.linspace(T - 1.0, T, K1 + 1)
    times = np.concatenate([tA, tB[1:], tC[1:]])
    K = K1 + K2 + K1
    densities = np.empty((K + 1,) + gamma.shape)
    increments = np.empty((K,) + jfaces.shape)
    densities[: K1 + 1] = gamma * (1.0 - tA.reshape((-1,) + (1,) * d)) + rho * tA.reshape((-1,) + (1,) * d)
    increments[:K1] = what
    densities[K1 : K1 + K2 + 1] = rho
    increments[K1 : K1 + K2] = scale * jtilde
    sC = (tC - (T - 1.0)).reshape((-1,) + (1,) * d)
    densities[K1 + K2 :] = rho * (1.0 - sC) + gamma * sC
    increments[K1 + K2 :] = -what
    return PathDiscretization(times, densities, increments)


def traveling_wave_path(rho0, v: float, J: float, T: float | None = None) -> PathDiscretization:
    """Rigid rotation of a profile with the current that transports it.

    One lattice site per step, dt = 1/(|v| M), so the discrete continuity
    equation holds exactly: the current J + v (rho - m) is sampled at the
    downwind node of each face. m is the mass of rho0; over whole periods
    the time-averaged current is exactly J on every face. Default horizon
    is one period 1/|v|.
    """
    rho0 = np.asarray(rho0, dtype=float)
    if rho0.ndim != 1:
        raise VariationalError("traveling waves are one dimensional here")
    if v == 0.0:
        raise VariationalError("v = 0 is not a wave; use minimize_Um for static profiles")
    M = rho0.size
    m = float(rho0.mean())
    period = 1.0 / abs(v)
    if T is None:
        n = 1
    else:
        ratio = float(T) / period
        n = int(round(ratio))
        if n < 1 or abs(ratio - n) > 1e-9:
            raise VariationalError(f"horizon {T} is not a whole number of periods {period}")
    K = n * M
    dt = period / M
    shift = 1 if v > 0 else -1
    b = 0 if v > 0 else 1
    times = np.arange(K + 1) * dt
    densities = np.empty((K + 1, M))
    increments = np.empty((K, 1, M))
    pi = rho0.copy()
    densities[0] = pi
    for k in range(K):
        increments[k, 0] = J + v * (np.roll(pi, -b) - m)
        pi = np.roll(pi, shift)
        densities[k + 1] = pi
    return PathDiscretization(times, densities, increments)


def glue_paths(p1: PathDiscretization, p2: PathDiscretization) -> PathDiscretization:
    """Concatenate two paths in time, seam checked to 1e-8.

    The second block of densities is shifted by the (tiny) seam mismatch
    so every slice keeps its own continuity identity; with exactly equal
    seams the result is a strict concatenation and costs add exactly.
    """
    if p1.densities.shape[1:] != p2.densities.shape[1:]:
        raise VariationalError("paths live on different grids")
    diff = p1.densities[-1] - p2.densities[0]
    if float(np.abs(diff).max()) > 1e-8:
        raise VariationalError(
            f"seam mismatch {float(np.abs(diff).max()):g} exceeds 1e-8; "
            "paths do not share the intermediate profile"
        )
    times = np.concatenate([p1.times, p1.T + p2.times[1:]])
    tail = p2.densities[1:] if not diff.any() else p2.densities[1:] + diff
    densities = np.concatenate([p1.densities, tail])
    increments = np.concatenate([p1.increments, p2.increments])
    return PathDiscretization(times, densities, increments)


def build_relaxation_path(gamma1, gamma2, m: float, delta: float, coeffs,
                          opts: dict | None = None) -> PathDiscretization:
    """Connect two profiles at a cost bounded by the entropy of the target.

    Three glued segments: free relaxation from gamma1 (zero cost), a
    unit-time linear bridge between the two relaxed profiles carried by
    its gradient-form current, and the time reversal of the relaxation of
    gamma2 (cost = entropy dissipated, at most S_m(gamma2)). Relaxation
    horizons are tried in increasing order until the total cost fits
    under S_m(gamma2) + delta; if none does, the error reports the best
    achieved bound.

    opts keys: horizons (tuple of relaxation times), bridge_steps, eps_chi.
    """
    opts = dict(opts or {})
    gamma1 = np.asarray(gamma1, dtype=float)
    gamma2 = np.asarray(gamma2, dtype=float)
    if gamma1.shape != gamma2.shape:
        raise VariationalError("profile grids differ")
    for name, g in (("gamma1", gamma1), ("gamma2", gamma2)):
        if abs(float(g.mean()) - m) > 1e-8:
            raise VariationalError(f"{name} has mass {float(g.mean()):.12g}, expected {m}")
    eps_chi = float(opts.get("eps_chi", 1e-10))
    bridge_steps = int(opts.get("bridge_steps", 64))
    bound = entropy_Sm(gamma2, m, coeffs) + float(delta)
    best_val = float("inf")
    best_path = None
    for horizon in opts.get("horizons", (0.25, 0.5, 1.0, 2.0)):
        fwd1 = solve_driven_parabolic(gamma1, None, coeffs, float(horizon))
        fwd2 = solve_driven_parabolic(gamma2, None, coeffs, float(horizon))
        bridge = _bridge_path(fwd1.densities[-1], fwd2.densities[-1], bridge_steps, coeffs, eps_chi)
        path = glue_paths(glue_paths(fwd1, bridge), _time_reverse(fwd2))
        val = eval_I(path, coeffs, eps_chi=eps_chi, keep_control=False).value
        if val < best_val:
            best_val, best_path = val, path
        if val <= bound:
            return path
    raise VariationalError(
        f"no relaxation horizon reached the requested bound: best cost {best_val:.6g} "
        f"exceeds S_m + delta = {bound:.6g}; increase delta or pass longer opts['horizons']"
    )


def _time_reverse(path: PathDiscretization) -> PathDiscretization:
    """Run a path backwards; reversed slices satisfy continuity exactly."""
    times = (path.T - path.times)[::-1].copy()
    densities = path.densities[::-1].copy()
    increments = -path.increments[::-1].copy()
    return PathDiscretization(times, densities, increments)


def _bridge_path(g1: np.ndarray, g2: np.ndarray, K: int, coeffs, eps_chi: float) -> PathDiscretization:
    """Unit-time linear interpolation carried by its gradient-form current."""
    d = g1.ndim
    dt = 1.0 / K
    t = np.arange(K + 1).reshape((-1,) + (1,) * d) * dt
    densities = g1 * (1.0 - t) + g2 * t
    skeleton = PathDiscretization(np.arange(K + 1) * dt, densities,
                                  np.zeros((K, d) + g1.shape))
    return gradient_form_path(skeleton, coeffs, eps_chi=eps_chi)
