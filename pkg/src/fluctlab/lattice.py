"""Periodic lattice geometry, transport coefficients, and particle states.

Design notes
------------
* Sites of the discrete torus (Z/NZ)^d are flattened row-major
  (lexicographic, last coordinate fastest), so site index and coordinate
  conversions are plain ravel/unravel operations and CSV output of states
  is bit-stable across platforms.
* Bonds are labeled by their left endpoint and direction: bond (x, j)
  joins site x to its forward neighbor x + e_j.
* Transport coefficients are bundled with their derivatives and the
  antiderivative of the diffusivity because the variational layer needs
  chi', chi'' (phase-transition criteria) and d(rho) with d' = D
  (drift currents in divergence form). Builtin models:

      ssep:  D = 1,  chi(a) = a (1 - a),   densities in [0, 1]
      kmp:   D = 1,  chi(a) = a^2,         energies in [0, inf)

* Initial laws are product measures: Bernoulli(profile(x/N)) for
  exclusion states, Exponential(mean profile(x/N)) for energy states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

__all__ = [
    "TorusGrid",
    "TransportCoefficients",
    "LatticeState",
    "make_torus",
    "coefficients_for",
    "random_state",
]


@dataclass(frozen=True)
class TorusGrid:
    """Discrete torus (Z/NZ)^d with row-major flattened site indices."""

    d: int
    N: int

    @property
    def sites(self) -> int:
        return self.N**self.d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.d

    def index(self, coords) -> np.ndarray:
        """Flatten coordinates (..., d) to site indices, wrapping mod N."""
        coords = np.asarray(coords)
        multi = tuple(np.mod(coords[..., j], self.N) for j in range(self.d))
        return np.ravel_multi_index(multi, self.shape)

    def coords(self, idx) -> np.ndarray:
        """Unflatten site indices to coordinates (..., d)."""
        multi = np.unravel_index(np.asarray(idx), self.shape)
        return np.stack(multi, axis=-1)

    def neighbor(self, idx, j: int, sign: int = 1) -> np.ndarray:
        """Site index of idx +/- e_j."""
        if not 0 <= j < self.d:
            raise ValueError(f"direction {j} out of range for d={self.d}")
        c = self.coords(idx)
        c[..., j] += sign
        return self.index(c)

    @cached_property
    def forward_neighbors(self) -> np.ndarray:
        """(sites, d) table of x + e_j for every site x."""
        idx = np.arange(self.sites)
        return np.stack([self.neighbor(idx, j, +1) for j in range(self.d)], axis=1)

    @cached_property
    def backward_neighbors(self) -> np.ndarray:
        """(sites, d) table of x - e_j for every site x."""
        idx = np.arange(self.sites)
        return np.stack([self.neighbor(idx, j, -1) for j in range(self.d)], axis=1)

    @cached_property
    def positions(self) -> np.ndarray:
        """(sites, d) macroscopic positions x / N on the unit torus."""
        return self.coords(np.arange(self.sites)).astype(np.float64) / self.N


def make_torus(d: int, N: int) -> TorusGrid:
    """Construct a validated discrete torus."""
    if d not in (1, 2, 3):
        raise ValueError(f"dimension must be 1, 2, or 3, got {d}")
    if N < 2:
        raise ValueError(f"side length must be at least 2, got {N}")
    return TorusGrid(d=d, N=int(N))


@dataclass(frozen=True)
class TransportCoefficients:
    """Diffusivity D and mobility chi with derivatives, on a density interval.

    ``antiderivative_D`` is d(rho) with d' = D, used to write diffusive
    currents as -(1/2) grad d(rho) so discrete conservation is exact.
    ``interval`` endpoints may be infinite (upper end for energy models).
    """

    name: str
    D: Callable[[np.ndarray], np.ndarray]
    chi: Callable[[np.ndarray], np.ndarray]
    chi_prime: Callable[[np.ndarray], np.ndarray]
    chi_dprime: Callable[[np.ndarray], np.ndarray]
    antiderivative_D: Callable[[np.ndarray], np.ndarray]
    interval: tuple[float, float]

    def contains(self, rho: np.ndarray, slack: float = 0.0) -> bool:
        lo, hi = self.interval
        r = np.asarray(rho)
        return bool(np.all(r >= lo - slack) and np.all(r <= hi + slack))

    def validate(self, probes: int = 201) -> None:
        """Probe the interval interior: chi >= 0 and D > 0, vectorized."""
        lo, hi = self.interval
        a = lo if math.isfinite(lo) else -10.0
        b = hi if math.isfinite(hi) else max(10.0, a + 10.0)
        eps = 1e-9 * (b - a)
        r = np.linspace(a + eps, b - eps, probes)
        c = np.asarray(self.chi(r), dtype=float)
        dd = np.asarray(self.D(r), dtype=float)
        if c.shape != r.shape or dd.shape != r.shape:
            raise ValueError(f"coefficients for {self.name!r} are not vectorized")
        if np.any(c < 0):
            raise ValueError(f"chi takes negative values for {self.name!r}")
        if np.any(dd <= 0):
            raise ValueError(f"D is not strictly positive for {self.name!r}")

    def reciprocal_chi_convex(self, probes: int = 401) -> bool:
        """Check convexity of 1/chi on the interval interior by sampling.

        (1/chi)'' = (2 chi'^2 - chi chi'') / chi^3 >= 0 pointwise.
        """
        lo, hi = self.interval
        a = lo if math.isfinite(lo) else 0.0
        b = hi if math.isfinite(hi) else max(10.0, a + 10.0)
        span = b - a
        r = np.linspace(a + 1e-6 * span, b - 1e-6 * span, probes)
        c = np.asarray(self.chi(r), dtype=float)
        cp = np.asarray(self.chi_prime(r), dtype=float)
        cpp = np.asarray(self.chi_dprime(r), dtype=float)
        good = c > 0
        return bool(np.all(2.0 * cp[good] ** 2 - c[good] * cpp[good] >= -1e-12))


def _ssep() -> TransportCoefficients:
    return TransportCoefficients(
        name="ssep",
        D=lambda r: np.ones_like(np.asarray(r, dtype=float)),
        chi=lambda r: np.asarray(r, dtype=float) * (1.0 - np.asarray(r, dtype=float)),
        chi_prime=lambda r: 1.0 - 2.0 * np.asarray(r, dtype=float),
        chi_dprime=lambda r: np.full_like(np.asarray(r, dtype=float), -2.0),
        antiderivative_D=lambda r: np.asarray(r, dtype=float),
        interval=(0.0, 1.0),
    )


def _kmp() -> TransportCoefficients:
    return TransportCoefficients(
        name="kmp",
        D=lambda r: np.ones_like(np.asarray(r, dtype=float)),
        chi=lambda r: np.asarray(r, dtype=float) ** 2,
        chi_prime=lambda r: 2.0 * np.asarray(r, dtype=float),
        chi_dprime=lambda r: np.full_like(np.asarray(r, dtype=float), 2.0),
        antiderivative_D=lambda r: np.asarray(r, dtype=float),
        interval=(0.0, math.inf),
    )


_BUILTIN = {"ssep": _ssep, "wasep": _ssep, "kmp": _kmp}


def coefficients_for(
    model: str | None = None,
    *,
    chi: Callable | None = None,
    D: Callable | None = None,
    chi_prime: Callable | None = None,
    chi_dprime: Callable | None = None,
    antiderivative_D: Callable | None = None,
    interval: tuple[float, float] | None = None,
    name: str = "custom",
) -> TransportCoefficients:
    """Return transport coefficients for a builtin model or a custom pair.

    For custom coefficients, missing derivatives fall back to central
    finite differences and a missing antiderivative to a tabulated
    cumulative integral of D; supplying analytic forms is preferred.
    """
    if model is not None:
        try:
            coeffs = _BUILTIN[model]()
        except KeyError:
            raise ValueError(f"unknown model {model!r}, expected one of {sorted(_BUILTIN)}")
        coeffs.validate()
        return coeffs

    if chi is None or interval is None:
        raise ValueError("custom coefficients need at least chi and interval")
    if D is None:
        D = lambda r: np.ones_like(np.asarray(r, dtype=float))  # noqa: E731

    h = 1e-5

    if chi_prime is None:
        chi_prime = lambda r: (chi(np.asarray(r) + h) - chi(np.asarray(r) - h)) / (2 * h)  # noqa: E731
    if chi_dprime is None:
        chi_dprime = lambda r: (  # noqa: E731
            chi(np.asarray(r) + h) - 2 * chi(np.asarray(r)) + chi(np.asarray(r) - h)
        ) / h**2
    if antiderivative_D is None:
        lo, hi = interval
        a = lo if math.isfinite(lo) else 0.0
        b = hi if math.isfinite(hi) else max(10.0, a + 10.0)
        grid = np.linspace(a, b, 4001)
        dvals = np.asarray(D(grid), dtype=float)
        table = np.concatenate(
            [[0.0], np.cumsum((dvals[1:] + dvals[:-1]) / 2 * np.diff(grid))]
        )
        antiderivative_D = lambda r: np.interp(np.asarray(r, dtype=float), grid, table)  # noqa: E731

    coeffs = TransportCoefficients(
        name=name,
        D=D,
        chi=chi,
        chi_prime=chi_prime,
        chi_dprime=chi_dprime,
        antiderivative_D=antiderivative_D,
        interval=interval,
    )
    coeffs.validate()
    return coeffs


@dataclass
class LatticeState:
    """Occupation (exclusion) or energy (kmp) configuration on a grid.

    ``values`` is flat of length grid.sites: int8 in {0,1} for exclusion,
    float64 >= 0 for energy. ``conserved`` records the total at creation;
    dynamics must preserve it.
    """

    grid: TorusGrid
    kind: str  # "exclusion" | "energy"
    values: np.ndarray
    conserved: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.kind not in ("exclusion", "energy"):
            raise ValueError(f"unknown state kind {self.kind!r}")
        self.values = np.asarray(self.values)
        if self.values.shape != (self.grid.sites,):
            raise ValueError(
                f"values shape {self.values.shape} does not match {self.grid.sites} sites"
            )
        if self.kind == "exclusion":
            if not np.all((self.values == 0) | (self.values == 1)):
                raise ValueError("exclusion values must be 0 or 1")
            self.values = self.values.astype(np.int8)
        else:
            self.values = self.values.astype(np.float64)
            if np.any(self.values < 0):
                raise ValueError("energy values must be non-negative")
        if self.conserved is None:
            self.conserved = float(self.values.sum())

    @property
    def total(self) -> float:
        return float(self.values.sum())

    def copy(self) -> "LatticeState":
        return LatticeState(self.grid, self.kind, self.values.copy(), self.conserved)


def _profile_values(grid: TorusGrid, profile) -> np.ndarray:
    if callable(profile):
        vals = np.asarray(profile(grid.positions), dtype=float)
        if vals.shape != (grid.sites,):
            raise ValueError("profile callable must return one value per site")
        return vals
    return np.full(grid.sites, float(profile))


def random_state(
    grid: TorusGrid,
    profile,
    seed: int,
    kind: str = "exclusion",
) -> LatticeState:
    """Draw a product-measure initial state with marginal mean profile(x/N).

    ``profile`` is a constant or a callable on (sites, d) positions.
    Exclusion sites are Bernoulli(profile); energy sites are Exponential
    with mean profile. The generator is counter-based (Philox), so states
    are reproducible independently of draw order elsewhere.
    """
    means = _profile_values(grid, profile)
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    if kind == "exclusion":
        if np.any(means < 0) or np.any(means > 1):
            raise ValueError("exclusion profile must take values in [0, 1]")
        values = (rng.random(grid.sites) < means).astype(np.int8)
    elif kind == "energy":
        if np.any(means < 0):
            raise ValueError("energy profile must be non-negative")
        values = rng.exponential(scale=1.0, size=grid.sites) * means
    else:
        raise ValueError(f"unknown state kind {kind!r}")
    return LatticeState(grid=grid, kind=kind, values=values)
