"""Jit-compiled event kernels: exact Gillespie loops and trajectory replay.

All kernels are deterministic given (state, rates, seed): randomness comes
from a counter-based splitmix64 stream, so identical inputs reproduce the
event sequence bit for bit regardless of how replicas are scheduled.

Directed rates are passed as dense arrays ep / em of shape (d, sites):
ep[j, x] multiplies a forward jump (exchange) across bond (x, x + e_j) and
em[j, x] a backward one; occupancy factors are applied inside the kernel.
Bond selection uses a Fenwick (binary indexed) tree over bonds, O(log nb)
per event, with direction resolved from the residual of the tree search.
"""

from __future__ import annotations

import numpy as np
from numba import njit

__all__ = [
    "mix64",
    "uniform01",
    "run_exclusion_segment",
    "run_kmp_segment",
    "rn_replay_segment",
]

_REBUILD_EVERY = 1 << 20


@njit(cache=True, nogil=True, inline="always")
def mix64(seed: np.uint64, counter: np.uint64) -> np.uint64:
    z = seed + counter * np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True, nogil=True, inline="always")
def uniform01(seed: np.uint64, counter: np.uint64) -> np.float64:
    # strictly inside (0, 1): safe for log and for scaled searches
    z = mix64(seed, counter)
    return (np.float64(z >> np.uint64(11)) + 0.5) * (2.0**-53)


@njit(cache=True, nogil=True, inline="always")
def _fenwick_add(tree: np.ndarray, nb: int, i: int, delta: float) -> None:
    idx = i + 1
    while idx <= nb:
        tree[idx] += delta
        idx += idx & (-idx)


@njit(cache=True, nogil=True, inline="always")
def _fenwick_find(tree: np.ndarray, nb: int, top_bit: int, r: float) -> tuple[int, float]:
    """Largest prefix <= r: returns (0-based index, residual within it)."""
    idx = 0
    rem = r
    bit = top_bit
    while bit > 0:
        nxt = idx + bit
        if nxt <= nb and tree[nxt] <= rem:
            rem -= tree[nxt]
            idx = nxt
        bit >>= 1
    return idx, rem


@njit(cache=True, nogil=True)
def _bond_rate(eta, fwd, ep, em, sites, b):
    j = b // sites
    x = b - j * sites
    y = fwd[x, j]
    r = 0.0
    if eta[x] == 1 and eta[y] == 0:
        r += ep[j, x]
    elif eta[y] == 1 and eta[x] == 0:
        r += em[j, x]
    return r


@njit(cache=True, nogil=True)
def _build_tree(eta, fwd, ep, em, sites, nb, rate, tree):
    total = 0.0
    for b in range(nb):
        rate[b] = _bond_rate(eta, fwd, ep, em, sites, b)
        total += rate[b]
    for i in range(nb + 1):
        tree[i] = 0.0
    for b in range(nb):
        _fenwick_add(tree, nb, b, rate[b])
    return total


@njit(cache=True, nogil=True)
def run_exclusion_segment(
    eta,  # int8[sites], mutated
    fwd,  # int64[sites, d]
    bwd,  # int64[sites, d]
    ep,  # float64[d, sites]
    em,  # float64[d, sites]
    t_start,
    t_end,
    seed,  # uint64
    counter,  # uint64
    W,  # int64[d, sites], mutated
    Jp,  # int64[d, sites], mutated
    Jm,  # int64[d, sites], mutated
    ev_t,  # float64[cap] (cap may be 0: no recording)
    ev_x,  # int64[cap]
    ev_j,  # int8[cap]
    ev_s,  # int8[cap]
    ev_start,  # first free slot
    snap_times,  # float64[ns], ascending, within (t_start, t_end]
    snap_done,  # first pending snapshot index
    snap_eta,  # int8[ns, sites], mutated
    snap_W,  # int64[ns, d, sites], mutated
):
    """Run the exclusion process on [t_start, t_end] with frozen rate factors.

    Returns (t, counter, n_events_total, snap_done, status) with status 0
    when t_end was reached and 1 when the event buffer filled first.
    """
    sites = eta.shape[0]
    d = ep.shape[0]
    nb = d * sites
    cap = ev_t.shape[0]
    recording = cap > 0

    top_bit = 1
    while (top_bit << 1) <= nb:
        top_bit <<= 1

    rate = np.empty(nb, dtype=np.float64)
    tree = np.empty(nb + 1, dtype=np.float64)
    total = _build_tree(eta, fwd, ep, em, sites, nb, rate, tree)

    t = t_start
    nev = ev_start
    isnap = snap_done
    ns = snap_times.shape[0]
    events_since_rebuild = 0
    status = 0

    while True:
        boundary = t_end if isnap >= ns else snap_times[isnap]
        if total <= 1e-300:
            t = boundary
        else:
            u = uniform01(seed, counter)
            counter += np.uint64(1)
            dt = -np.log(u) / total
            if t + dt > boundary:
                t = boundary
            else:
                t = t + dt
                u2 = uniform01(seed, counter)
                counter += np.uint64(1)
                b, rem = _fenwick_find(tree, nb, top_bit, u2 * total)
                if b >= nb:
                    b = nb - 1
                j = b // sites
                x = b - j * sites
                y = fwd[x, j]
                rp = ep[j, x] if (eta[x] == 1 and eta[y] == 0) else 0.0
                rm = em[j, x] if (eta[y] == 1 and eta[x] == 0) else 0.0
                if rem < rp:
                    sign = 1
                elif rem < rp + rm:
                    sign = -1
                else:
                    sign = 0  # rounding phantom: no executable move on this bond
                if sign != 0:
                    if sign == 1:
                        eta[x] = 0
                        eta[y] = 1
                        W[j, x] += 1
                        Jp[j, x] += 1
                    else:
                        eta[y] = 0
                        eta[x] = 1
                        W[j, x] -= 1
                        Jm[j, x] += 1
                    if recording:
                        ev_t[nev] = t
                        ev_x[nev] = x
                        ev_j[nev] = j
                        ev_s[nev] = sign
                    nev += 1
                    for si in range(2):
                        s = x if si == 0 else y
                        for jj in range(d):
                            b2 = jj * sites + s
                            new = _bond_rate(eta, fwd, ep, em, sites, b2)
                            delta = new - rate[b2]
                            if delta != 0.0:
                                rate[b2] = new
                                total += delta
                                _fenwick_add(tree, nb, b2, delta)
                            b3 = jj * sites + bwd[s, jj]
                            new = _bond_rate(eta, fwd, ep, em, sites, b3)
                            delta = new - rate[b3]
                            if delta != 0.0:
                                rate[b3] = new
                                total += delta
                                _fenwick_add(tree, nb, b3, delta)
                    events_since_rebuild += 1
                    if events_since_rebuild >= _REBUILD_EVERY:
                        total = _build_tree(eta, fwd, ep, em, sites, nb, rate, tree)
                        events_since_rebuild = 0
                    if recording and nev >= cap:
                        status = 1
                        break
                continue
        # reached a boundary
        if isnap < ns and t >= snap_times[isnap]:
            for i in range(sites):
                snap_eta[isnap, i] = eta[i]
            for jj in range(d):
                for i in range(sites):
                    snap_W[isnap, jj, i] = W[jj, i]
            isnap += 1
            if t < t_end or isnap < ns:
                continue
        break

    return t, counter, nev, isnap, status


@njit(cache=True, nogil=True)
def run_kmp_segment(
    energy,  # float64[sites], mutated
    rate_per_bond,  # float64 (N^2)
    t_start,
    t_end,
    seed,
    counter,
    W,  # float64[1, sites], mutated
    rings,  # int64[1, sites], mutated
    ev_t,
    ev_x,
    ev_a,  # float64[cap] signed amounts
    ev_start,
    snap_times,
    snap_done,
    snap_energy,  # float64[ns, sites]
    snap_W,  # float64[ns, 1, sites]
):
    """Energy-exchange chain on a ring: every bond fires at rate_per_bond.

    On a ring of bond (x, x+1) the pair energy S is resplit uniformly,
    (e_x, e_{x+1}) -> (pS, (1-p)S), and the signed transfer e_x - pS is
    added to the bond current. Total energy is preserved by construction
    (the new right value is computed as (e_x - pS) + e_{x+1}).
    """
    sites = energy.shape[0]
    cap = ev_t.shape[0]
    recording = cap > 0
    total = rate_per_bond * sites
    t = t_start
    nev = ev_start
    isnap = snap_done
    ns = snap_times.shape[0]
    status = 0

    while True:
        boundary = t_end if isnap >= ns else snap_times[isnap]
        u = uniform01(seed, counter)
        counter += np.uint64(1)
        dt = -np.log(u) / total
        if t + dt > boundary:
            t = boundary
        else:
            t = t + dt
            u2 = uniform01(seed, counter)
            counter += np.uint64(1)
            x = int(u2 * sites)
            if x >= sites:
                x = sites - 1
            y = x + 1 if x + 1 < sites else 0
            p = uniform01(seed, counter)
            counter += np.uint64(1)
            S = energy[x] + energy[y]
            new_x = p * S
            delta = energy[x] - new_x
            energy[y] = delta + energy[y]
            energy[x] = new_x
            W[0, x] += delta
            rings[0, x] += 1
            if recording:
                ev_t[nev] = t
                ev_x[nev] = x
                ev_a[nev] = delta
            nev += 1
            if recording and nev >= cap:
                status = 1
                break
            continue
        if isnap < ns and t >= snap_times[isnap]:
            for i in range(sites):
                snap_energy[isnap, i] = energy[i]
            for i in range(sites):
                snap_W[isnap, 0, i] = W[0, i]
            isnap += 1
            if t < t_end or isnap < ns:
                continue
        break

    return t, counter, nev, isnap, status


@njit(cache=True, nogil=True, inline="always")
def _bond_contrib(eta, fwd, ep0, em0, epf, emf, sites, b):
    j = b // sites
    x = b - j * sites
    y = fwd[x, j]
    if eta[x] == 1 and eta[y] == 0:
        return epf[j, x] - ep0[j, x]
    if eta[y] == 1 and eta[x] == 0:
        return emf[j, x] - em0[j, x]
    return 0.0


@njit(cache=True, nogil=True)
def rn_replay_segment(
    eta,  # int8[sites], state at t_start, mutated to state at t_end
    fwd,
    bwd,
    ep0,  # float64[d, sites] reference directed rates
    em0,
    epf,  # float64[d, sites] tilted directed rates
    emf,
    logfac,  # float64[d, sites] log(epf/ep0) = F_j(x/N)/N
    ev_t,
    ev_x,
    ev_j,
    ev_s,
    ev_lo,  # events [ev_lo, ev_hi) fall inside this segment
    ev_hi,
    t_start,
    t_end,
):
    """Accumulate the exact likelihood-ratio pieces over one rate segment.

    Returns (stochastic_term, rate_integral): the first is the sum of
    +/- logfac over jumps, the second integrates the difference of total
    tilted and reference escape rates along the trajectory. Per-bond
    contributions are cached so repeated updates stay idempotent.
    """
    sites = eta.shape[0]
    d = ep0.shape[0]
    nb = d * sites

    contrib = np.empty(nb, dtype=np.float64)
    G = 0.0
    for b in range(nb):
        contrib[b] = _bond_contrib(eta, fwd, ep0, em0, epf, emf, sites, b)
        G += contrib[b]

    sto = 0.0
    integ = 0.0
    t_prev = t_start
    for n in range(ev_lo, ev_hi):
        te = ev_t[n]
        x = ev_x[n]
        j = ev_j[n]
        s = ev_s[n]
        integ += (te - t_prev) * G
        t_prev = te
        if s == 1:
            sto += logfac[j, x]
        else:
            sto -= logfac[j, x]
        y = fwd[x, j]
        if s == 1:
            eta[x] = 0
            eta[y] = 1
        else:
            eta[y] = 0
            eta[x] = 1
        for si in range(2):
            site = x if si == 0 else y
            for jj in range(d):
                b2 = jj * sites + site
                new = _bond_contrib(eta, fwd, ep0, em0, epf, emf, sites, b2)
                G += new - contrib[b2]
                contrib[b2] = new
                b3 = jj * sites + bwd[site, jj]
                new = _bond_contrib(eta, fwd, ep0, em0, epf, emf, sites, b3)
                G += new - contrib[b3]
                contrib[b3] = new
    integ += (t_end - t_prev) * G
    return sto, integ
