"""Rate functionals for density and current paths.

Quadrature convention: every time integral is a left-point sum over the
slices of the path, and the flux term pairs current increments with the
test field at the slice start (the discrete Stieltjes integral of F
against dW). Because the test functional and the quadratic rate share
this quadrature and the gradient/divergence pair is exactly adjoint, the
variational inequality J_F <= I holds slice by slice with equality at
the optimizing field, not just up to discretization error.

Pairings: <a, b> for face fields is the site mean of the componentwise
product, i.e. sum over sites and components divided by M^d.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .pde import (
    PathDiscretization,
    div_b,
    eval_vector_callable,
    face_average,
    grad_f,
    grid_positions,
    laplacian,
    solve_elliptic_chi,
)

__all__ = [
    "FunctionalError",
    "RateEvalReport",
    "pair_faces",
    "eval_JF",
    "eval_I",
    "eval_density_rate",
    "gradient_form_path",
    "static_integrand",
    "entropy_Sm",
]


class FunctionalError(RuntimeError):
    """A path fails the structural requirements of a functional."""


@dataclass
class RateEvalReport:
    """Value of a functional evaluation plus its audit trail.

    ``terms`` holds the additive pieces of the value (or solver tallies),
    ``clamped_faces`` counts mobility evaluations floored at eps_chi, and
    ``continuity_residual`` is the sup-norm continuity defect of the path
    that was checked before evaluating. When the functional has a control
    representation, ``control`` stores the per-slice face field G with
    value = (1/2) sum_k dt <chi_k G_k, G_k> (chi floored the same way),
    so the value can be recomputed from the report alone.
    """

    functional: str
    value: float
    slices: int
    terms: dict = field(default_factory=dict)
    clamped_faces: int = 0
    continuity_residual: float = 0.0
    control: np.ndarray | None = None

    def to_kv_text(self) -> str:
        lines = [
            f"functional={self.functional}",
            f"value={self.value!r}",
            f"slices={self.slices}",
            f"clamped_faces={self.clamped_faces}",
            f"continuity_residual={self.continuity_residual!r}",
            f"has_control={int(self.control is not None)}",
        ]
        for key in sorted(self.terms):
            lines.append(f"term_{key}={self.terms[key]!r}")
        return "\n".join(lines) + "\n"


def pair_faces(a: np.ndarray, b: np.ndarray) -> float:
    """<a, b>: site mean of the componentwise product of two face fields."""
    sites = a[0].size
    return float((a * b).sum() / sites)


def _slice_field(F, k: int, t: float, P: np.ndarray, K: int) -> np.ndarray:
    """Resolve a static array, per-slice array, or callable at slice k."""
    d = P.shape[-1]
    base = P.shape[:-1]
    if callable(F):
        return eval_vector_callable(F, t, P)
    F = np.asarray(F, dtype=float)
    if F.shape == (d,) + base:
        return F
    if F.shape == (K, d) + base:
        return F[k]
    raise ValueError(
        f"field shape {F.shape} is neither static {(d,) + base} nor per-slice {(K, d) + base}"
    )


def _node_field(F, path: PathDiscretization, P: np.ndarray) -> list:
    """Resolve F to face fields at the K+1 time nodes of a path.

    Callables are sampled at the nodes. A static (d, ...) array is shared
    by every node. A per-slice (K, d, ...) array is read as left-node
    values of a field piecewise constant in time, so the terminal node
    repeats the last slice; a (K+1, d, ...) array is taken as node values.
    """
    K, d = path.K, path.d
    base = P.shape[:-1]
    if callable(F):
        return [eval_vector_callable(F, float(t), P) for t in path.times]
    F = np.asarray(F, dtype=float)
    if F.shape == (d,) + base:
        return [F] * (K + 1)
    if F.shape == (K + 1, d) + base:
        return list(F)
    if F.shape == (K, d) + base:
        return list(F) + [F[K - 1]]
    raise ValueError(
        f"field shape {F.shape} fits neither static {(d,) + base} nor "
        f"per-slice {(K, d) + base} nor per-node {(K + 1, d) + base}"
    )


def drift_current(pi: np.ndarray, coeffs, E_faces: np.ndarray | None = None) -> np.ndarray:
    """Hydrodynamic current -(1/2) grad d(pi) + chi(pi) E at the faces."""
    w = -0.5 * grad_f(np.asarray(coeffs.antiderivative_D(pi), dtype=float))
    if E_faces is not None:
        w = w + np.asarray(coeffs.chi(face_average(pi)), dtype=float) * E_faces
    return w


def _check_continuity(path: PathDiscretization, tol: float | None) -> float:
    resid = path.continuity_residual()
    limit = 1e-8 * path.M if tol is None else tol
    if resid > limit:
        raise FunctionalError(
            f"path violates continuity: residual {resid:g} exceeds {limit:g}; "
            "the functional is only defined on the continuity class of gamma"
        )
    return resid


def eval_JF(
    path: PathDiscretization,
    F,
    coeffs,
    continuity_tol: float | None = None,
) -> float:
    """Linear-quadratic test functional of a current path against field F.

    Four terms: the terminal pairing <W_T, F_T>, minus the Stieltjes sum
    sum_k <W_{k+1}, F_{k+1} - F_k>, minus (1/2) sum_k dt <d(pi_k), div F_k>,
    minus (1/2) sum_k dt <chi(pi_k), |F_k|^2>. The first two telescope to
    sum_k dt <w_k, F_k>, and the divergence pair is exactly adjoint to the
    gradient, so the value equals sum_k dt { <w_k - w(pi_k), F_k>
    - (1/2) <chi F_k, F_k> }: for every F this bounds the quadratic rate
    of the same path from below, slice by slice, with equality when F is
    the normalized excess current chi^-1 (w - w(pi)).
    """
    _check_continuity(path, continuity_tol)
    K, M, d = path.K, path.M, path.d
    P = grid_positions(M, d)
    nodes = _node_field(F, path, P)
    dts = path.dts
    Wcum = path.W_cumulative()
    terminal = pair_faces(Wcum[K], nodes[K])
    stieltjes = 0.0
    for k in range(K):
        step = nodes[k + 1] - nodes[k]
        if np.any(step):
            stieltjes += pair_faces(Wcum[k + 1], step)
    divergence = quad = 0.0
    for k in range(K):
        dt = float(dts[k])
        Fk = nodes[k]
        pik = path.densities[k]
        chif = np.asarray(coeffs.chi(face_average(pik)), dtype=float)
        dpik = np.asarray(coeffs.antiderivative_D(pik), dtype=float)
        divergence += 0.5 * dt * float(np.mean(dpik * div_b(Fk)))
        quad += 0.5 * dt * pair_faces(chif * Fk, Fk)
    return terminal - stieltjes - divergence - quad


def eval_I(
    path: PathDiscretization,
    coeffs,
    E=None,
    eps_chi: float = 1e-10,
    continuity_tol: float | None = None,
    keep_control: bool = True,
) -> RateEvalReport:
    """Quadratic current rate (1/2) int <(w - w(pi)), chi^-1 (w - w(pi))> dt.

    The mobility is evaluated at face averages and floored at eps_chi for
    the division only; excess current across a face of vanishing mobility
    therefore contributes on the order of 1/eps_chi, standing in for the
    infinite cost of such a path. The control fields G_k = (w_k -
    w(pi_k))/chi are kept in the report unless keep_control is False
    (long paths on fine grids may not be worth the memory).
    """
    resid = _check_continuity(path, continuity_tol)
    K, M, d = path.K, path.M, path.d
    P = grid_positions(M, d)
    dts = path.dts
    total = 0.0
    clamped = 0
    control = np.empty_like(path.increments) if keep_control else None
    for k in range(K):
        t = float(path.times[k])
        dt = float(dts[k])
        pik = path.densities[k]
        Ek = None if E is None else _slice_field(E, k, t, P, K)
        chif = np.asarray(coeffs.chi(face_average(pik)), dtype=float)
        wdot = -0.5 * grad_f(np.asarray(coeffs.antiderivative_D(pik), dtype=float))
        if Ek is not None:
            wdot = wdot + chif * Ek
        clamped += int(np.count_nonzero(chif < eps_chi))
        chif = np.maximum(chif, eps_chi)
        G = (path.increments[k] - wdot) / chif
        if control is not None:
            control[k] = G
        total += 0.5 * dt * pair_faces(chif * G, G)
    return RateEvalReport(
        functional="current_rate",
        value=total,
        slices=K,
        clamped_faces=clamped,
        continuity_residual=resid,
        control=control,
    )


def eval_density_rate(
    path: PathDiscretization,
    coeffs,
    eps_chi: float = 1e-10,
) -> RateEvalReport:
    """Density-path rate (1/2) int <grad H, chi(pi) grad H> dt.

    H_k solves div(chi(pi_k) grad H_k) = (pi_{k+1} - pi_k)/dt - (1/2) lap d(pi_k)
    on each slice; only the densities of the path enter. Mass must be
    conserved along the path, otherwise no H exists.
    """
    drift_mass = path.mass_drift()
    if drift_mass > 1e-10 * (1.0 + abs(float(path.gamma.mean()))):
        raise FunctionalError(
            f"density path does not conserve mass (drift {drift_mass:g}); "
            "the elliptic slice problems are unsolvable"
        )
    K = path.K
    dts = path.dts
    total = 0.0
    clamped = 0
    iters = 0
    worst_resid = 0.0
    control = np.empty_like(path.increments)
    for k in range(K):
        dt = float(dts[k])
        pik = path.densities[k]
        rhs = (path.densities[k + 1] - pik) / dt - 0.5 * laplacian(
            np.asarray(coeffs.antiderivative_D(pik), dtype=float)
        )
        H, info = solve_elliptic_chi(pik, rhs, coeffs, eps_chi=eps_chi)
        clamped += info.clamped_faces
        iters += info.iterations
        worst_resid = max(worst_resid, info.residual)
        chif = np.maximum(np.asarray(coeffs.chi(face_average(pik)), dtype=float), eps_chi)
        gH = grad_f(H)
        control[k] = gH
        total += 0.5 * dt * pair_faces(chif * gH, gH)
    return RateEvalReport(
        functional="density_rate",
        value=total,
        slices=K,
        clamped_faces=clamped,
        terms={"elliptic_iterations": float(iters), "elliptic_residual": worst_resid},
        control=control,
    )


def gradient_form_path(
    path: PathDiscretization,
    coeffs,
    eps_chi: float = 1e-10,
) -> PathDiscretization:
    """Replace the currents of a path by their gradient-form representative.

    The new increments w_k = -(1/2) grad d(pi_k) - chi(pi_k) grad H_k carry
    the same densities through the continuity equation (to solver
    precision) and realize the density rate of the path as a current rate:
    they are the cheapest currents in the continuity class of the slice.
    """
    K = path.K
    dts = path.dts
    increments = np.empty_like(path.increments)
    for k in range(K):
        dt = float(dts[k])
        pik = path.densities[k]
        dpi = np.asarray(coeffs.antiderivative_D(pik), dtype=float)
        rhs = (path.densities[k + 1] - pik) / dt - 0.5 * laplacian(dpi)
        H, _ = solve_elliptic_chi(pik, rhs, coeffs, eps_chi=eps_chi)
        chif = np.maximum(np.asarray(coeffs.chi(face_average(pik)), dtype=float), eps_chi)
        increments[k] = -0.5 * grad_f(dpi) - chif * grad_f(H)
    return PathDiscretization(path.times.copy(), path.densities.copy(), increments)


def static_integrand(rho: np.ndarray, j, coeffs, E=None, eps_chi: float = 1e-10) -> float:
    """Cost density of holding profile rho while driving constant current j.

    This is the time integrand of the current rate on a frozen profile:
    (1/2) <(j - w(rho)), chi(rho)^-1 (j - w(rho))>. ``j`` may be a scalar
    (d = 1), a constant vector, or a full face field.
    """
    rho = np.asarray(rho, dtype=float)
    d = rho.ndim
    w = np.zeros((d,) + rho.shape)
    j = np.asarray(j, dtype=float)
    if j.ndim == 0:
        if d != 1:
            raise ValueError("scalar current only makes sense in one dimension")
        w[0] = j
    elif j.shape == (d,):
        w += j.reshape((d,) + (1,) * d)
    elif j.shape == w.shape:
        w += j
    else:
        raise ValueError(f"current shape {j.shape} does not fit dimension {d}")

    E_faces = None
    if E is not None:
        P = grid_positions(rho.shape[0], d)
        E_faces = _slice_field(E, 0, 0.0, P, 1)
    wdot = drift_current(rho, coeffs, E_faces)
    chif = np.maximum(np.asarray(coeffs.chi(face_average(rho)), dtype=float), eps_chi)
    G = (w - wdot) / chif
    return 0.5 * pair_faces(chif * G, G)


def entropy_Sm(gamma: np.ndarray, m: float, coeffs, order: int = 64) -> float:
    """Local equilibrium entropy of a profile relative to flat density m.

    S(gamma) = int s(gamma(u)) du with s'' = D/chi and s(m) = s'(m) = 0,
    evaluated as s(a) = (a - m)^2 int_0^1 (1 - x) (D/chi)(m + x(a - m)) dx
    by Gauss-Legendre quadrature (exact for smooth integrands). Profiles
    touching a zero of chi give inf.
    """
    gamma = np.asarray(gamma, dtype=float)
    x, wq = np.polynomial.legendre.leggauss(order)
    x = (x + 1.0) / 2.0
    wq = wq / 2.0
    a = gamma.reshape(-1)
    delta = a - m
    r = m + np.outer(x, delta)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.asarray(coeffs.D(r), dtype=float) / np.asarray(coeffs.chi(r), dtype=float)
        s = delta**2 * np.tensordot(wq * (1.0 - x), g, axes=(0, 0))
    if np.any(np.isnan(s)):
        return float("inf")
    # Gauss nodes never sample the profile value itself, so a zero of chi
    # at gamma_i can hide a divergence: (a - q) D/chi is integrable there
    # only when the zero is simple. Probe the local order toward m.
    touched = np.unique(a[(np.asarray(coeffs.chi(a), dtype=float) == 0.0) & (a != m)])
    for val in touched:
        sgn = 1.0 if m > val else -1.0
        h = 1e-6 * max(1.0, abs(m - val))
        c1 = float(coeffs.chi(val + sgn * h)) / h
        c2 = float(coeffs.chi(val + sgn * h / 2)) / (h / 2)
        if c1 <= 0.0 or c2 < 0.75 * c1:
            return float("inf")
    return float(s.mean())
