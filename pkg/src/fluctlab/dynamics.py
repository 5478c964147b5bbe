"""Event-driven simulation of exclusion and energy-exchange dynamics.

Exclusion bonds carry the diffusive clock N^2/2; a drift field F tilts the
two directions of bond (x, x + e_j) by exp(+F_j(t, x/N)/N) and
exp(-F_j(t, x/N)/N). Time-dependent fields are handled piecewise: the
field is frozen at the start of each refresh segment, which is exact for
static fields and an O(T/refreshes) approximation otherwise; the
likelihood-ratio replay uses the same convention, so simulated chain and
reported density match each other exactly.

Energy-exchange (kmp) bonds ring at rate N^2 and resplit the pair energy
uniformly; the signed amount leaving the left site is the bond current.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _engine
from .lattice import LatticeState, TorusGrid

__all__ = [
    "JumpEvent",
    "EventLog",
    "Snapshots",
    "CurrentLedger",
    "DriftField",
    "simulate_exclusion",
    "simulate_kmp",
    "log_rn_derivative",
    "derive_replica_seed",
]

_MASK = (1 << 64) - 1


def derive_replica_seed(master: int, index: int) -> int:
    """Counter-based seed for replica ``index`` of a master seed."""
    z = (int(master) + (int(index) + 1) * 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


@dataclass(frozen=True)
class JumpEvent:
    """One recorded transition: bond (site, direction) at a given time.

    ``sign_or_amount`` is +/-1 for exclusion jumps (forward/backward across
    the bond) and the signed transferred energy for exchange events.
    """

    time: float
    site: int
    direction: int
    sign_or_amount: float


@dataclass
class EventLog:
    times: np.ndarray
    sites: np.ndarray
    directions: np.ndarray
    signs: np.ndarray | None = None  # int8, exclusion
    amounts: np.ndarray | None = None  # float64, energy exchange

    def __len__(self) -> int:
        return int(self.times.size)

    def __getitem__(self, i: int) -> JumpEvent:
        value = float(self.signs[i]) if self.signs is not None else float(self.amounts[i])
        return JumpEvent(
            time=float(self.times[i]),
            site=int(self.sites[i]),
            direction=int(self.directions[i]),
            sign_or_amount=value,
        )

    def net_current_until(self, t: float, grid: TorusGrid) -> np.ndarray:
        """Per-bond net current W^{x,x+e_j}_t, shape (d, sites)."""
        n = int(np.searchsorted(self.times, t, side="right"))
        weights = self.signs[:n] if self.signs is not None else self.amounts[:n]
        W = np.zeros((grid.d, grid.sites))
        np.add.at(W, (self.directions[:n], self.sites[:n]), weights)
        return W


@dataclass
class Snapshots:
    times: np.ndarray
    states: np.ndarray  # (n, sites)
    currents: np.ndarray  # (n, d, sites)


@dataclass
class CurrentLedger:
    """Bond-resolved current bookkeeping for one trajectory on [0, T].

    W[j, x] is the net signed current across bond (x, x + e_j) (integer
    jump balance for exclusion, transferred energy for kmp); jumps_plus
    and jumps_minus are gross directed counts (for kmp, jumps_plus counts
    ring events and jumps_minus stays zero).
    """

    grid: TorusGrid
    T: float
    W: np.ndarray
    jumps_plus: np.ndarray
    jumps_minus: np.ndarray
    events: EventLog | None = None
    snapshots: Snapshots | None = None

    def conservation_residual(self, initial: LatticeState, final: LatticeState) -> float:
        """sup |eta_T - eta_0 - (incoming - outgoing) W| over sites; 0 when exact."""
        grid = self.grid
        inflow = np.zeros(grid.sites)
        for j in range(grid.d):
            Wj = self.W[j].astype(float)
            inflow += Wj[grid.backward_neighbors[:, j]] - Wj
        defect = final.values.astype(float) - initial.values.astype(float) - inflow
        return float(np.abs(defect).max())


@dataclass
class DriftField:
    """External drift F: [0, T] x torus -> R^d sampled at bond label nodes.

    ``fn(t, P)`` receives positions P of shape (..., d) and returns
    components in any of the layouts accepted by the PDE helpers. Static
    fields (time_dependent=False) are evaluated once; time-dependent ones
    are frozen at the start of each of ``refreshes`` equal segments.
    """

    fn: Callable
    time_dependent: bool = False
    refreshes: int = 64

    @classmethod
    def constant(cls, value) -> "DriftField":
        vec = np.atleast_1d(np.asarray(value, dtype=float))

        def fn(t, P, vec=vec):
            out = np.zeros(P.shape[:-1] + (vec.size,))
            out[...] = vec
            return out

        return cls(fn=fn, time_dependent=False)

    def on_bonds(self, grid: TorusGrid, t: float) -> np.ndarray:
        """F_j(t, x/N) for every bond, shape (d, sites)."""
        from .pde import eval_vector_callable

        return eval_vector_callable(self.fn, t, grid.positions)


def _segments(T: float, field: DriftField | None) -> np.ndarray:
    if field is None or not field.time_dependent:
        return np.array([0.0, T])
    n = max(1, int(field.refreshes))
    return np.linspace(0.0, T, n + 1)


def _directed_rates(
    grid: TorusGrid, field: DriftField | None, t: float
) -> tuple[np.ndarray, np.ndarray]:
    pref = grid.N**2 / 2.0
    if field is None:
        ones = np.full((grid.d, grid.sites), pref)
        return ones, ones.copy()
    F = field.on_bonds(grid, t)
    arg = F / grid.N
    return pref * np.exp(arg), pref * np.exp(-arg)


def _grow(arr: np.ndarray) -> np.ndarray:
    out = np.empty(max(16, arr.size * 2), dtype=arr.dtype)
    out[: arr.size] = arr
    return out


def simulate_exclusion(
    initial: LatticeState,
    T: float,
    field: DriftField | None = None,
    seed: int = 0,
    record_events: bool = False,
    snapshot_times: Sequence[float] | None = None,
) -> tuple[LatticeState, CurrentLedger]:
    """Exact event-driven exclusion dynamics on [0, T].

    Returns the final state and the current ledger; identical inputs give
    an identical event sequence. Snapshot times must lie in (0, T].
    """
    if initial.kind != "exclusion":
        raise ValueError("simulate_exclusion needs an exclusion state")
    if T <= 0:
        raise ValueError("horizon must be positive")
    grid = initial.grid
    eta = initial.values.copy()
    fwd = np.ascontiguousarray(grid.forward_neighbors.astype(np.int64))
    bwd = np.ascontiguousarray(grid.backward_neighbors.astype(np.int64))
    W = np.zeros((grid.d, grid.sites), dtype=np.int64)
    Jp = np.zeros_like(W)
    Jm = np.zeros_like(W)

    snap_times = np.asarray(sorted(snapshot_times), dtype=float) if snapshot_times else np.empty(0)
    if snap_times.size and (snap_times[0] <= 0 or snap_times[-1] > T):
        raise ValueError("snapshot times must lie in (0, T]")
    snap_eta = np.zeros((snap_times.size, grid.sites), dtype=np.int8)
    snap_W = np.zeros((snap_times.size, grid.d, grid.sites), dtype=np.int64)

    cap = 1 << 16 if record_events else 0
    ev_t = np.empty(cap, dtype=np.float64)
    ev_x = np.empty(cap, dtype=np.int64)
    ev_j = np.empty(cap, dtype=np.int8)
    ev_s = np.empty(cap, dtype=np.int8)

    counter = np.uint64(0)
    seed64 = np.uint64(int(seed) & _MASK)
    nev = 0
    snap_done = 0
    bounds = _segments(T, field)
    for a, b in zip(bounds[:-1], bounds[1:]):
        ep, em = _directed_rates(grid, field, float(a))
        in_seg = (snap_times > a) & (snap_times <= b) if snap_times.size else np.zeros(0, bool)
        seg_snaps = snap_times[: (np.nonzero(in_seg)[0].max() + 1)] if in_seg.any() else snap_times[:snap_done]
        t = float(a)
        while True:
            t, counter, nev, snap_done, status = _engine.run_exclusion_segment(
                eta, fwd, bwd, ep, em, t, float(b), seed64, counter,
                W, Jp, Jm, ev_t, ev_x, ev_j, ev_s, nev,
                seg_snaps, snap_done, snap_eta, snap_W,
            )
            if status == 0:
                break
            ev_t, ev_x, ev_j, ev_s = _grow(ev_t), _grow(ev_x), _grow(ev_j), _grow(ev_s)

    final = LatticeState(grid, "exclusion", eta, conserved=initial.conserved)
    if final.total != initial.total:
        raise RuntimeError("particle number was not conserved; engine invariant broken")

    events = None
    if record_events:
        events = EventLog(
            times=ev_t[:nev].copy(),
            sites=ev_x[:nev].copy(),
            directions=ev_j[:nev].copy(),
            signs=ev_s[:nev].copy(),
        )
    snapshots = None
    if snap_times.size:
        snapshots = Snapshots(times=snap_times, states=snap_eta, currents=snap_W)
    ledger = CurrentLedger(grid=grid, T=T, W=W, jumps_plus=Jp, jumps_minus=Jm,
                           events=events, snapshots=snapshots)
    return final, ledger


def simulate_kmp(
    initial: LatticeState,
    T: float,
    seed: int = 0,
    record_events: bool = False,
    snapshot_times: Sequence[float] | None = None,
) -> tuple[LatticeState, CurrentLedger]:
    """Energy-exchange chain on the d = 1 ring, every bond ringing at N^2."""
    if initial.kind != "energy":
        raise ValueError("simulate_kmp needs an energy state")
    if initial.grid.d != 1:
        raise ValueError("the energy-exchange chain is one dimensional")
    if T <= 0:
        raise ValueError("horizon must be positive")
    grid = initial.grid
    energy = initial.values.copy()
    W = np.zeros((1, grid.sites), dtype=np.float64)
    rings = np.zeros((1, grid.sites), dtype=np.int64)

    snap_times = np.asarray(sorted(snapshot_times), dtype=float) if snapshot_times else np.empty(0)
    if snap_times.size and (snap_times[0] <= 0 or snap_times[-1] > T):
        raise ValueError("snapshot times must lie in (0, T]")
    snap_energy = np.zeros((snap_times.size, grid.sites))
    snap_W = np.zeros((snap_times.size, 1, grid.sites))

    cap = 1 << 16 if record_events else 0
    ev_t = np.empty(cap, dtype=np.float64)
    ev_x = np.empty(cap, dtype=np.int64)
    ev_a = np.empty(cap, dtype=np.float64)

    counter = np.uint64(0)
    seed64 = np.uint64(int(seed) & _MASK)
    nev = 0
    snap_done = 0
    t = 0.0
    while True:
        t, counter, nev, snap_done, status = _engine.run_kmp_segment(
            energy, float(grid.N**2), t, float(T), seed64, counter,
            W, rings, ev_t, ev_x, ev_a, nev,
            snap_times, snap_done, snap_energy, snap_W,
        )
        if status == 0:
            break
        ev_t, ev_x, ev_a = _grow(ev_t), _grow(ev_x), _grow(ev_a)

    final = LatticeState(grid, "energy", energy, conserved=initial.conserved)
    drift = abs(final.total - initial.total)
    if drift > 1e-9 * max(1.0, initial.total):
        raise RuntimeError(f"total energy drifted by {drift:g}; engine invariant broken")

    events = None
    if record_events:
        events = EventLog(
            times=ev_t[:nev].copy(),
            sites=ev_x[:nev].copy(),
            directions=np.zeros(nev, dtype=np.int8),
            amounts=ev_a[:nev].copy(),
        )
    snapshots = None
    if snap_times.size:
        snapshots = Snapshots(times=snap_times, states=snap_energy, currents=snap_W)
    ledger = CurrentLedger(grid=grid, T=T, W=W, jumps_plus=rings,
                           jumps_minus=np.zeros_like(rings), events=events, snapshots=snapshots)
    return final, ledger


def log_rn_derivative(
    initial: LatticeState,
    ledger: CurrentLedger,
    field: DriftField,
) -> float:
    """N^-d log dP_F/dP of a recorded exclusion trajectory, exact form.

    The value is the per-volume log likelihood ratio of the tilted chain
    with drift F against the reference chain, combining the sum of
    +/- F_j(x/N)/N over recorded jumps with the integrated difference of
    escape rates along the trajectory. Works on trajectories simulated
    under either measure; requires a recorded event log.
    """
    if ledger.events is None:
        raise ValueError("log_rn_derivative needs a trajectory with a recorded event log")
    if initial.kind != "exclusion":
        raise ValueError("likelihood ratios are defined for exclusion trajectories")
    grid = ledger.grid
    eta = initial.values.copy()
    fwd = np.ascontiguousarray(grid.forward_neighbors.astype(np.int64))
    bwd = np.ascontiguousarray(grid.backward_neighbors.astype(np.int64))
    ev = ledger.events
    pref = grid.N**2 / 2.0
    ep0 = np.full((grid.d, grid.sites), pref)
    em0 = ep0.copy()

    sto_total = 0.0
    integ_total = 0.0
    bounds = _segments(ledger.T, field)
    for a, b in zip(bounds[:-1], bounds[1:]):
        F = field.on_bonds(grid, float(a))
        logfac = F / grid.N
        epf = pref * np.exp(logfac)
        emf = pref * np.exp(-logfac)
        lo = int(np.searchsorted(ev.times, a, side="right"))
        hi = int(np.searchsorted(ev.times, b, side="right"))
        sto, integ = _engine.rn_replay_segment(
            eta, fwd, bwd, ep0, em0, epf, emf, logfac,
            ev.times, ev.sites, ev.directions, ev.signs,
            lo, hi, float(a), float(b),
        )
        sto_total += sto
        integ_total += integ
    return (sto_total - integ_total) / grid.sites
