"""Empirical fields, test-field batteries, and current-space geometry.

Pairings follow the microscopic convention: a test function is evaluated
at node positions x/N (for vector fields, component j at the left node of
bond (x, x + e_j)), and the empirical current carries the 1/N^(d+1)
normalization, i.e. a single forward jump across bond (x, j) contributes
exactly F_j(x/N) / N^(d+1) to the pairing with F.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .lattice import LatticeState
from .pde import grid_positions, poisson_periodic, grad_f, div_b

__all__ = [
    "ScalarField",
    "VectorField",
    "TestFieldFamily",
    "empirical_density",
    "empirical_current",
    "block_density",
    "two_block_observable",
    "current_metric",
    "divergence_free_projection",
]


def _overlap_matrix(M: int, N: int) -> np.ndarray:
    """(M, N) row-stochastic cell-overlap weights between two uniform meshes.

    Entry (k, x) is M * |[k/M, (k+1)/M) ∩ [x/N, (x+1)/N)|, the fraction of
    target cell k covered by source cell x.
    """
    k = np.arange(M)
    x = np.arange(N)
    lo = np.maximum.outer(k / M, x / N)
    hi = np.minimum.outer((k + 1) / M, (x + 1) / N)
    return np.maximum(hi - lo, 0.0) * M


def _resample(values: np.ndarray, M: int) -> np.ndarray:
    """Cell-average a (N,)*d array onto an (M,)*d grid, axis by axis."""
    N = values.shape[0]
    if M == N:
        return values.astype(float)
    O = _overlap_matrix(M, N)
    out = values.astype(float)
    for axis in range(values.ndim):
        out = np.moveaxis(np.tensordot(O, np.moveaxis(out, axis, 0), axes=(1, 0)), 0, axis)
    return out


def _eval_scalar(fn: Callable, P: np.ndarray) -> np.ndarray:
    out = np.asarray(fn(P), dtype=float)
    if out.shape != P.shape[:-1]:
        raise ValueError(f"scalar test function returned shape {out.shape}")
    return out


def _eval_vector(fn: Callable, P: np.ndarray) -> np.ndarray:
    d = P.shape[-1]
    base = P.shape[:-1]
    out = np.asarray(fn(P), dtype=float)
    if out.shape == (d,) + base:
        return out
    if out.shape == base + (d,):
        return np.moveaxis(out, -1, 0)
    if d == 1 and out.shape == base:
        return out[np.newaxis]
    raise ValueError(f"vector test function returned shape {out.shape}")


@dataclass
class ScalarField:
    """Density-like field sampled on the (M,)*d node grid."""

    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)

    @property
    def d(self) -> int:
        return self.values.ndim

    @property
    def M(self) -> int:
        return self.values.shape[0]

    def mass(self) -> float:
        return float(self.values.mean())

    def pair(self, f) -> float:
        """<field, f> by node quadrature; f is a callable or an array."""
        if callable(f):
            f = _eval_scalar(f, grid_positions(self.M, self.d))
        return float((self.values * np.asarray(f)).mean())

    def resample(self, M: int) -> "ScalarField":
        return ScalarField(_resample(self.values, M))


@dataclass
class VectorField:
    """Current-like field; component j at index i sits on face (i, i + e_j)."""

    components: np.ndarray

    def __post_init__(self) -> None:
        self.components = np.asarray(self.components, dtype=float)
        if self.components.ndim != self.components.shape[0] + 1:
            raise ValueError(
                f"components shape {self.components.shape} is not (d,) + (M,)*d"
            )

    @property
    def d(self) -> int:
        return int(self.components.shape[0])

    @property
    def M(self) -> int:
        return int(self.components.shape[1])

    def pair(self, F) -> float:
        """<J, F> with F evaluated at face label nodes (callable or array)."""
        if callable(F):
            F = _eval_vector(F, grid_positions(self.M, self.d))
        return float((self.components * np.asarray(F)).sum() / self.M**self.d)

    def pair_gradient(self, f, discrete: bool = True) -> float:
        """<J, grad f> with the forward-difference gradient of node samples.

        With discrete=True this makes summation by parts exact; with
        discrete=False the analytic gradient callable f must instead return
        vector values and is paired directly.
        """
        if discrete:
            fv = _eval_scalar(f, grid_positions(self.M, self.d)) if callable(f) else np.asarray(f)
            return self.pair(grad_f(fv))
        return self.pair(f)

    def resample(self, M: int) -> "VectorField":
        return VectorField(np.stack([_resample(c, M) for c in self.components]))


def empirical_density(state: LatticeState, M: int | None = None) -> ScalarField:
    """Empirical density pi^N as a grid field (cell averages when M != N)."""
    grid = state.grid
    values = state.values.reshape(grid.shape).astype(float)
    if M is None or M == grid.N:
        return ScalarField(values)
    return ScalarField(_resample(values, M))


def empirical_current(ledger, t: float | None = None, M: int | None = None) -> VectorField:
    """Empirical time-integrated current W^N_t as a grid vector field.

    The stored value at face (x, j) is W^{x,x+e_j}_t / N, which makes the
    node-quadrature pairing equal to the measure pairing with its
    1/N^(d+1) normalization. ``t=None`` means the full horizon; earlier
    times require a recorded event log.
    """
    grid = ledger.grid
    N = grid.N
    if t is None or t == ledger.T:
        W = ledger.W.astype(float)
    else:
        if t < 0 or t > ledger.T:
            raise ValueError(f"time {t} outside the simulated horizon [0, {ledger.T}]")
        if ledger.events is None:
            raise ValueError("intermediate-time current needs a recorded event log")
        W = ledger.events.net_current_until(t, grid)
    comps = W.reshape((grid.d,) + grid.shape) / N
    field = VectorField(comps)
    if M is not None and M != N:
        field = field.resample(M)
    return field


def block_density(state: LatticeState, x: int, ell: int) -> float:
    """Average of the configuration over the box |y - x|_inf <= ell."""
    if ell < 0:
        raise ValueError("block radius must be non-negative")
    grid = state.grid
    vals = state.values.reshape(grid.shape).astype(float)
    center = grid.coords(x)
    for axis in range(grid.d):
        vals = np.roll(vals, ell - int(center[axis]), axis=axis)
    window = vals[(slice(0, 2 * ell + 1),) * grid.d]
    return float(window.mean())


def _box_average(arr: np.ndarray, ell: int) -> np.ndarray:
    """Periodic moving average over the (2 ell + 1)^d box."""
    out = arr.astype(float)
    n = 2 * ell + 1
    for axis in range(arr.ndim):
        stacked = sum(np.roll(out, s, axis=axis) for s in range(-ell, ell + 1))
        out = stacked / n
    return out


def two_block_observable(state: LatticeState, eps: float, j: int = 0) -> float:
    """Average gap between the two-point block estimate and the squared block density.

    Uses block radius ell = floor(eps * N) (so the full and empty lattices
    give exactly zero) and direction j for the nearest-neighbor product.
    """
    grid = state.grid
    ell = int(eps * grid.N)
    if ell < 1:
        raise ValueError(f"eps * N = {eps * grid.N:g} must be at least 1")
    eta = state.values.reshape(grid.shape).astype(float)
    pair = eta * np.roll(eta, -1, axis=j)
    pair_block = _box_average(pair, ell)
    dens_block = _box_average(eta, ell)
    return float(np.abs(pair_block - dens_block**2).mean())


class TestFieldFamily:
    """Deterministic battery of smooth vector fields with sup norm one.

    Members are e_j cos(2 pi k.u) and e_j sin(2 pi k.u) enumerated by
    total frequency |k|_1, then k lexicographically, then component j,
    then cos before sin; the k = 0 sine (identically zero) is skipped.
    The family separates divergence-free currents in the limit.
    """

    def __init__(self, d: int, count: int):
        self.d = d
        self.count = count
        self._members: list[tuple[np.ndarray, int, str]] = []
        total = 0
        while len(self._members) < count:
            for k in self._frequencies(total):
                for j in range(d):
                    for kind in ("cos", "sin"):
                        if kind == "sin" and not np.any(k):
                            continue
                        self._members.append((k, j, kind))
            total += 1
        self._members = self._members[:count]

    def _frequencies(self, total: int) -> list[np.ndarray]:
        if self.d == 1:
            return [np.array([total])]
        out = []
        rng = range(-total, total + 1)
        for k in np.ndindex(*(2 * total + 1,) * self.d):
            vec = np.array(k) - total
            if np.abs(vec).sum() == total:
                out.append(vec)
        out.sort(key=lambda v: tuple(v))
        return out

    def label(self, i: int) -> str:
        k, j, kind = self._members[i]
        return f"{kind}(2pi {tuple(int(a) for a in k)}.u) e_{j}"

    def __len__(self) -> int:
        return self.count

    def evaluate(self, i: int, P: np.ndarray) -> np.ndarray:
        """Member i at positions P (..., d), components first."""
        k, j, kind = self._members[i]
        phase = 2 * np.pi * np.tensordot(P, k.astype(float), axes=(-1, 0))
        profile = np.cos(phase) if kind == "cos" else np.sin(phase)
        out = np.zeros((self.d,) + P.shape[:-1])
        out[j] = profile
        return out

    def gradient_potential(self, i: int, M: int) -> np.ndarray:
        """Solve lap F = div G_i on the (M,)*d grid (compressible content)."""
        P = grid_positions(M, self.d)
        G = self.evaluate(i, P)
        return poisson_periodic(div_b(G) - div_b(G).mean())


def current_metric(J1: VectorField, J2: VectorField, family: TestFieldFamily | None = None,
                   K: int = 20) -> float:
    """Weighted-pairing metric sum_k 2^-k min(1, |<J1 - J2, G_k>|)."""
    if J1.components.shape != J2.components.shape:
        raise ValueError("currents live on different grids")
    if family is None:
        family = TestFieldFamily(J1.d, K)
    P = grid_positions(J1.M, J1.d)
    diff = VectorField(J1.components - J2.components)
    total = 0.0
    for i in range(min(K, len(family))):
        g = diff.pair(family.evaluate(i, P))
        total += 2.0 ** (-(i + 1)) * min(1.0, abs(g))
    return total


def divergence_free_projection(J: VectorField) -> VectorField:
    """Orthogonal projection onto the kernel of the discrete divergence.

    Diagonalizes in Fourier space with the symbol of the backward
    difference, so the result has div_b at rounding level, the projection
    is idempotent, and real fields stay real (the symbol respects the
    conjugate symmetry, Nyquist mode included). In d = 1 this is the
    constant field carrying the mean.
    """
    comps = J.components
    d, M = J.d, J.M
    hats = [np.fft.fftn(c) for c in comps]
    sym = M * (1.0 - np.exp(-2j * np.pi * np.fft.fftfreq(M)))
    syms = []
    for j in range(d):
        shape = [1] * d
        shape[j] = M
        syms.append(sym.reshape(shape))
    s2 = sum(np.abs(s) ** 2 for s in syms)
    s2safe = np.where(s2 == 0, 1.0, s2)
    sdotJ = sum(syms[j] * hats[j] for j in range(d))
    out = []
    for j in range(d):
        proj = np.where(s2 == 0, hats[j], hats[j] - np.conj(syms[j]) * sdotJ / s2safe)
        out.append(np.real(np.fft.ifftn(proj)))
    return VectorField(np.stack(out))
