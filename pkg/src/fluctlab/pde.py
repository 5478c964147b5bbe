"""Discrete parabolic/elliptic solvers on the periodic unit torus.

Grid convention: scalar fields are arrays of shape (M,)*d sampled at nodes
u = i/M; vector fields are arrays of shape (d,) + (M,)*d whose component j
at index i lives on the face between node i and node i + e_j (labeled by
the left node, exactly like microscopic bond currents).

The discrete gradient is the forward difference and the discrete
divergence the backward difference, so the pair is exactly adjoint,

    sum(f * div(w)) = -sum(w * grad(f)),

the composition div(grad(f)) is the standard (2d+1)-point Laplacian, and
every evolution written in divergence form conserves mass to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "TimeGrid",
    "PathDiscretization",
    "grad_f",
    "div_b",
    "face_average",
    "laplacian",
    "poisson_periodic",
    "grid_positions",
    "eval_vector_callable",
    "cfl_limit",
    "solve_heat",
    "solve_driven_parabolic",
    "solve_continuity",
    "solve_elliptic_chi",
    "PDEError",
    "EllipticInfo",
]


class PDEError(RuntimeError):
    """Instability, range violation, or solver failure in a PDE routine."""


# ---------------------------------------------------------------------------
# discrete calculus


def grad_f(f: np.ndarray) -> np.ndarray:
    """Forward-difference gradient, shape (d,) + f.shape."""
    d = f.ndim
    M = f.shape[0]
    return np.stack([(np.roll(f, -1, axis=j) - f) * M for j in range(d)])


def div_b(w: np.ndarray) -> np.ndarray:
    """Backward-difference divergence of a face field (d,) + (M,)*d."""
    d = w.shape[0]
    M = w.shape[1]
    out = np.zeros(w.shape[1:])
    for j in range(d):
        out += (w[j] - np.roll(w[j], 1, axis=j)) * M
    return out


def face_average(f: np.ndarray) -> np.ndarray:
    """Arithmetic mean of f at the two endpoints of each face, (d,) + f.shape."""
    d = f.ndim
    return np.stack([(f + np.roll(f, -1, axis=j)) / 2.0 for j in range(d)])


def laplacian(f: np.ndarray) -> np.ndarray:
    return div_b(grad_f(f))


def poisson_periodic(rhs: np.ndarray) -> np.ndarray:
    """Solve div(grad(phi)) = rhs exactly (FFT diagonalization), zero-mean gauge.

    rhs must have zero mean; the (2d+1)-point Laplacian is circulant, so the
    FFT inverts the discrete operator itself and the residual is rounding.
    """
    mean = rhs.mean()
    if abs(mean) > 1e-10 * (1.0 + np.abs(rhs).max()):
        raise PDEError(f"Poisson right-hand side has nonzero mean {mean:g}")
    d = rhs.ndim
    M = rhs.shape[0]
    sym = np.zeros(rhs.shape)
    for j in range(d):
        k = np.fft.fftfreq(M) * M  # integer wavenumbers
        s = -4.0 * M**2 * np.sin(np.pi * k / M) ** 2
        shape = [1] * d
        shape[j] = M
        sym = sym + s.reshape(shape)
    hat = np.fft.fftn(rhs - mean)
    sym_flat = sym.copy()
    sym_flat.flat[0] = 1.0  # gauge: zero out the constant mode below
    phi_hat = hat / sym_flat
    phi_hat.flat[0] = 0.0
    return np.real(np.fft.ifftn(phi_hat))


def grid_positions(M: int, d: int) -> np.ndarray:
    """Node positions i/M, shape (M,)*d + (d,)."""
    axes = [np.arange(M) / M] * d
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack(mesh, axis=-1)


def eval_vector_callable(fn: Callable, t: float, P: np.ndarray) -> np.ndarray:
    """Evaluate a vector-field callable at positions P (..., d).

    Accepts components-first (d, ...), components-last (..., d), or a bare
    scalar array for d = 1; returns components-first.
    """
    d = P.shape[-1]
    base = P.shape[:-1]
    out = np.asarray(fn(t, P), dtype=float)
    if out.shape == (d,) + base:
        return out
    if out.shape == base + (d,):
        return np.moveaxis(out, -1, 0)
    if d == 1 and out.shape == base:
        return out[np.newaxis]
    raise ValueError(f"field callable returned shape {out.shape}, expected {(d,) + base}")


# ---------------------------------------------------------------------------
# time grids and paths


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing times t_0 = 0 < ... < t_K."""

    times: np.ndarray

    def __post_init__(self) -> None:
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("need at least two time points")
        if t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ValueError("times must start at 0 and increase strictly")
        object.__setattr__(self, "times", t)

    @classmethod
    def uniform(cls, T: float, K: int) -> "TimeGrid":
        return cls(np.linspace(0.0, float(T), int(K) + 1))

    @property
    def K(self) -> int:
        return self.times.size - 1

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def dts(self) -> np.ndarray:
        return np.diff(self.times)


def cfl_limit(M: int, d: int) -> float:
    """Largest admissible explicit-Euler step for the heat part."""
    return 0.5 / (d * M**2)


@dataclass
class PathDiscretization:
    """Piecewise description of a density/current path on [0, T].

    densities: (K+1,) + (M,)*d node samples pi_k = pi(t_k).
    increments: (K, d) + (M,)*d face currents, constant on [t_k, t_{k+1}).
    The pair belongs to the continuity class of gamma = densities[0] when
    (pi_{k+1} - pi_k)/dt_k + div(w_k) = 0 for every k.
    """

    times: np.ndarray
    densities: np.ndarray
    increments: np.ndarray

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        self.densities = np.asarray(self.densities, dtype=float)
        self.increments = np.asarray(self.increments, dtype=float)
        K = self.times.size - 1
        if self.densities.shape[0] != K + 1 or self.increments.shape[0] != K:
            raise ValueError("times, densities, increments have inconsistent lengths")
        if self.increments.shape[1] != self.densities.ndim - 1:
            raise ValueError("increment component count does not match dimension")

    @property
    def K(self) -> int:
        return self.times.size - 1

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def M(self) -> int:
        return self.densities.shape[1]

    @property
    def d(self) -> int:
        return self.densities.ndim - 1

    @property
    def dts(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def gamma(self) -> np.ndarray:
        return self.densities[0]

    def continuity_residual(self) -> float:
        """sup-norm of (pi_{k+1} - pi_k)/dt + div(w_k) over all slices."""
        worst = 0.0
        for k in range(self.K):
            dt = self.times[k + 1] - self.times[k]
            r = (self.densities[k + 1] - self.densities[k]) / dt + div_b(self.increments[k])
            worst = max(worst, float(np.abs(r).max()))
        return worst

    def mass_drift(self) -> float:
        masses = self.densities.reshape(self.K + 1, -1).mean(axis=1)
        return float(np.abs(masses - masses[0]).max())

    def W_total(self) -> np.ndarray:
        """Time-integrated current W_T, shape (d,) + (M,)*d."""
        dts = self.dts.reshape((-1,) + (1,) * (self.densities.ndim))
        return (self.increments * dts).sum(axis=0)

    def W_cumulative(self) -> np.ndarray:
        """W_{t_k} for k = 0..K, shape (K+1, d) + (M,)*d; W_0 = 0."""
        dts = self.dts.reshape((-1,) + (1,) * (self.densities.ndim))
        out = np.zeros((self.K + 1,) + self.increments.shape[1:])
        np.cumsum(self.increments * dts, axis=0, out=out[1:])
        return out


# ---------------------------------------------------------------------------
# parabolic solvers


def _resolve_steps(T: float, dt: float | None, M: int, d: int) -> tuple[int, float]:
    limit = cfl_limit(M, d)
    if dt is None:
        dt = limit / 2
    if dt > limit * (1 + 1e-12):
        raise PDEError(f"time step {dt:g} violates the stability limit {limit:g}")
    K = max(1, int(np.ceil(T / dt - 1e-12)))
    return K, T / K


def solve_heat(gamma: np.ndarray, T: float, dt: float | None = None) -> PathDiscretization:
    """Explicit-Euler heat flow d_t rho = (1/2) lap rho from gamma.

    Each step stores the instantaneous current w_k = -(1/2) grad pi_k, so
    the returned path satisfies discrete continuity exactly.
    """
    gamma = np.asarray(gamma, dtype=float)
    d = gamma.ndim
    M = gamma.shape[0]
    K, dt = _resolve_steps(T, dt, M, d)
    densities = np.empty((K + 1,) + gamma.shape)
    increments = np.empty((K, d) + gamma.shape)
    densities[0] = gamma
    pi = gamma.copy()
    for k in range(K):
        w = -0.5 * grad_f(pi)
        increments[k] = w
        pi = pi - dt * div_b(w)
        densities[k + 1] = pi
    return PathDiscretization(np.linspace(0.0, T, K + 1), densities, increments)


def solve_driven_parabolic(
    gamma: np.ndarray,
    field,
    coeffs,
    T: float,
    dt: float | None = None,
    range_slack: float = 1e-8,
) -> PathDiscretization:
    """Explicit-Euler flow d_t rho = (1/2) lap d(rho) - div(chi(rho) F).

    ``field`` is None, a static (d,)+(M,)*d array, or a callable
    (t, positions) -> components; it is sampled at face label nodes.
    Densities leaving the admissible interval by more than range_slack
    raise PDEError (the mobility is not trusted outside it).
    """
    gamma = np.asarray(gamma, dtype=float)
    d = gamma.ndim
    M = gamma.shape[0]
    K, dt = _resolve_steps(T, dt, M, d)
    P = grid_positions(M, d)

    def field_at(t: float) -> np.ndarray:
        if field is None:
            return np.zeros((d,) + gamma.shape)
        if isinstance(field, np.ndarray):
            return field
        return eval_vector_callable(field, t, P)

    static = field is None or isinstance(field, np.ndarray)
    F = field_at(0.0)
    lo, hi = coeffs.interval
    densities = np.empty((K + 1,) + gamma.shape)
    increments = np.empty((K, d) + gamma.shape)
    densities[0] = gamma
    pi = gamma.copy()
    for k in range(K):
        if not static:
            F = field_at(k * dt)
        if np.any(pi < lo - range_slack) or np.any(pi > hi + range_slack):
            raise PDEError(f"density left the admissible interval at step {k}")
        w = -0.5 * grad_f(coeffs.antiderivative_D(pi)) + coeffs.chi(face_average(pi)) * F
        increments[k] = w
        pi = pi - dt * div_b(w)
        densities[k + 1] = pi
    if np.any(densities[-1] < lo - range_slack) or np.any(densities[-1] > hi + range_slack):
        raise PDEError("density left the admissible interval at the final time")
    return PathDiscretization(np.linspace(0.0, T, K + 1), densities, increments)


@dataclass
class ContinuityFlags:
    """Range diagnostics attached to a transported path (no clamping)."""

    out_of_range_slices: int = 0
    min_density: float = np.inf
    max_density: float = -np.inf


def solve_continuity(
    gamma: np.ndarray,
    increments: np.ndarray,
    times: np.ndarray,
    interval: tuple[float, float] | None = None,
) -> tuple[PathDiscretization, ContinuityFlags]:
    """Transport gamma along prescribed face currents; exact by construction.

    Returns the path and flags recording whether any slice left ``interval``
    (densities are never clamped).
    """
    gamma = np.asarray(gamma, dtype=float)
    times = np.asarray(times, dtype=float)
    increments = np.asarray(increments, dtype=float)
    K = times.size - 1
    densities = np.empty((K + 1,) + gamma.shape)
    densities[0] = gamma
    flags = ContinuityFlags()
    pi = gamma.copy()
    for k in range(K):
        dt = times[k + 1] - times[k]
        pi = pi - dt * div_b(increments[k])
        densities[k + 1] = pi
        flags.min_density = min(flags.min_density, float(pi.min()))
        flags.max_density = max(flags.max_density, float(pi.max()))
        if interval is not None:
            lo, hi = interval
            if np.any(pi < lo) or np.any(pi > hi):
                flags.out_of_range_slices += 1
    return PathDiscretization(times, densities, increments), flags


# ---------------------------------------------------------------------------
# chi-weighted elliptic solve


@dataclass
class EllipticInfo:
    iterations: int
    residual: float
    clamped_faces: int = 0


def solve_elliptic_chi(
    pi: np.ndarray,
    rhs: np.ndarray,
    coeffs,
    eps_chi: float = 1e-10,
    tol_rel: float = 1e-12,
    tol_abs: float = 0.0,
    maxiter: int | None = None,
) -> tuple[np.ndarray, EllipticInfo]:
    """Solve div(chi(pi) grad H) = rhs, zero-mean gauge, by projected PCG.

    chi is evaluated at face averages of pi and floored at eps_chi (floored
    faces are counted in the returned info). The right-hand side must have
    (numerically) zero mean, otherwise the problem is unsolvable.
    """
    pi = np.asarray(pi, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    scale = 1.0 + float(np.abs(rhs).max())
    mean = rhs.mean()
    if abs(mean) > 1e-8 * scale:
        raise PDEError(f"elliptic right-hand side has mean {mean:g}, not solvable")
    chi_face = np.asarray(coeffs.chi(face_average(pi)), dtype=float)
    clamped = int(np.count_nonzero(chi_face < eps_chi))
    chi_face = np.maximum(chi_face, eps_chi)

    d = pi.ndim
    M = pi.shape[0]

    def apply_A(v: np.ndarray) -> np.ndarray:
        # negative of the weighted Laplacian: positive semidefinite
        return -div_b(chi_face * grad_f(v))

    diag = np.zeros(pi.shape)
    for j in range(d):
        diag += (chi_face[j] + np.roll(chi_face[j], 1, axis=j)) * M**2
    inv_diag = 1.0 / diag

    b = -(rhs - mean)
    b -= b.mean()
    x = np.zeros_like(b)
    r = b.copy()
    z = inv_diag * r
    z -= z.mean()
    p = z.copy()
    rz = float((r * z).sum())
    bnorm = float(np.linalg.norm(b))
    target = max(tol_rel * bnorm, tol_abs)
    if maxiter is None:
        maxiter = 20 * b.size
    it = 0
    resid = float(np.linalg.norm(r))
    while resid > target and it < maxiter:
        Ap = apply_A(p)
        alpha = rz / float((p * Ap).sum())
        x += alpha * p
        r -= alpha * Ap
        resid = float(np.linalg.norm(r))
        z = inv_diag * r
        z -= z.mean()
        rz_new = float((r * z).sum())
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
    if resid > max(target, 1e-9 * max(1.0, bnorm)):
        raise PDEError(f"elliptic solve stalled at residual {resid:g} after {it} iterations")
    x -= x.mean()
    return x, EllipticInfo(iterations=it, residual=resid, clamped_faces=clamped)
