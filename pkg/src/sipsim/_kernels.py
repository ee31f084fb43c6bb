"""Compiled hot loops for batch simulation work.

The particle system generates on the order of 2*N^4 events per unit of
macroscopic time, which puts ensemble statistics far out of reach of the pure
Python engine. The kernels here implement the same jump dynamics as
``engine.step`` in nopython numba, streaming out only what the verification
layer needs: condensed-state entries with both clocks, time-in/out split,
discounted occupation integrals, and birth-death walk outcomes.

Randomness: xoshiro256++ driven by splitmix64 seeding, with the state hashed
from (master_seed, replica_index, stream_tag). The generator family is 64-bit
and jump-ahead capable, and the hash derivation makes every replica stream a
pure function of the run configuration, so reruns are bit-identical.

The Python engine in ``engine.py`` is the readable reference; tests compare
the two paths statistically so the kernels never certify themselves.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

# terminal status codes for sip_trace_kernel
STATUS_RAW_LIMIT = 0
STATUS_OVERFLOW = 1
STATUS_SOFT_STOP = 2
STATUS_DEAD = 3
STATUS_TRACE_LIMIT = 4

_U64_MASK = 0xFFFFFFFFFFFFFFFF


@njit(inline="always")
def _sm64(z):
    # one splitmix64 step; z is a single-element uint64 carrier, advanced in place
    z[0] = z[0] + np.uint64(0x9E3779B97F4A7C15)
    x = z[0]
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


@njit(cache=True)
def _seed_state(master, replica, tag):
    z = np.empty(1, dtype=np.uint64)
    s = np.empty(4, dtype=np.uint64)
    z[0] = master
    a = _sm64(z)
    z[0] = z[0] ^ (np.uint64(replica) ^ a)
    b = _sm64(z)
    z[0] = z[0] ^ (np.uint64(tag) ^ b)
    s[0] = _sm64(z)
    s[1] = _sm64(z)
    s[2] = _sm64(z)
    s[3] = _sm64(z)
    if s[0] | s[1] | s[2] | s[3] == np.uint64(0):
        s[3] = np.uint64(0x9E3779B97F4A7C15)
    return s


def kernel_seed(master_seed: int, replica_index: int, tag: int = 0) -> np.ndarray:
    """Derive a kernel RNG state by hashing (master_seed, replica_index, tag)."""
    return _seed_state(
        np.uint64(master_seed & _U64_MASK),
        np.uint64(replica_index & _U64_MASK),
        np.uint64(tag & _U64_MASK),
    )


@njit(inline="always")
def _rotl(x, r):
    return (x << r) | (x >> (np.uint64(64) - r))


@njit(inline="always")
def _next_u64(s):
    # xoshiro256++
    result = _rotl(s[0] + s[3], np.uint64(23)) + s[0]
    t = s[1] << np.uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], np.uint64(45))
    return result


@njit(inline="always")
def _next_unit(s):
    # uniform on [0, 1), 53-bit resolution
    return (_next_u64(s) >> np.uint64(11)) * (2.0**-53)


@njit(inline="always")
def _next_exp(s):
    # standard exponential; the argument of log is in (0, 1], never zero
    return -math.log(1.0 - _next_unit(s))


@njit(inline="always")
def _isolated_sorted(occ, sites, n_occ, k, L, out_sites, out_masses):
    """If the current state is condensed (<= k piles, pairwise distance >= 2),
    fill out_sites/out_masses sorted by site and return the pile count.
    Returns 0 otherwise."""
    if n_occ > k or n_occ == 0:
        return 0
    for j in range(n_occ):
        out_sites[j] = sites[j]
    for a in range(1, n_occ):
        v = out_sites[a]
        b = a - 1
        while b >= 0 and out_sites[b] > v:
            out_sites[b + 1] = out_sites[b]
            b -= 1
        out_sites[b + 1] = v
    if n_occ > 1:
        for j in range(n_occ - 1):
            if out_sites[j + 1] - out_sites[j] < 2:
                return 0
        if L - (out_sites[n_occ - 1] - out_sites[0]) < 2:
            return 0
    for j in range(n_occ):
        out_masses[j] = occ[out_sites[j]]
    return n_occ


@njit(cache=True)
def sip_trace_kernel(
    occ,
    theta,
    d,
    k,
    rng,
    t_raw_max,
    t_trace_max,
    t_trace_soft,
    rec_t_raw,
    rec_t_trace,
    rec_ell,
    rec_sites,
    rec_masses,
):
    """Simulate the jump chain, recording every change of condensed state.

    occ is modified in place and holds the final occupancy on return. A record
    is written each time the process enters a condensed state that differs
    from the last condensed state seen (these are exactly the jumps of the
    trace process). Clocks: t_raw is total elapsed time, t_trace counts only
    time spent condensed.

    Stop conditions (first wins):
      * t_raw reaches t_raw_max (> 0 enables)            -> STATUS_RAW_LIMIT
      * t_trace reaches t_trace_max (> 0 enables)        -> STATUS_TRACE_LIMIT
      * condensed in a single pile with t_trace past
        t_trace_soft (>= 0 enables)                      -> STATUS_SOFT_STOP
      * record buffer full                               -> STATUS_OVERFLOW
      * no active rate                                   -> STATUS_DEAD

    Returns (status, n_rec, t_raw, t_trace, n_exits, n_events) where n_exits
    counts departures from the condensed set.
    """
    L = occ.shape[0]
    max_rec = rec_t_raw.shape[0]

    sites = np.empty(L, dtype=np.int64)
    site_pos = np.full(L, -1, dtype=np.int64)
    n_occ = 0
    for x in range(L):
        if occ[x] > 0:
            sites[n_occ] = x
            site_pos[x] = n_occ
            n_occ += 1

    rates = np.empty(2 * L, dtype=np.float64)
    cur_sites = np.empty(k, dtype=np.int64)
    cur_masses = np.empty(k, dtype=np.int64)
    prev_sites = np.full(k, -1, dtype=np.int64)
    prev_masses = np.full(k, -1, dtype=np.int64)

    prev_ell = _isolated_sorted(occ, sites, n_occ, k, L, cur_sites, cur_masses)
    in_E = prev_ell > 0
    for j in range(prev_ell):
        prev_sites[j] = cur_sites[j]
        prev_masses[j] = cur_masses[j]

    t_raw = 0.0
    t_trace = 0.0
    n_rec = 0
    n_exits = 0
    n_events = 0
    status = -1

    while True:
        if in_E and prev_ell == 1 and t_trace_soft >= 0.0 and t_trace >= t_trace_soft:
            status = STATUS_SOFT_STOP
            break

        total = 0.0
        for j in range(n_occ):
            s_ = sites[j]
            c = occ[s_]
            y1 = s_ + 1
            if y1 == L:
                y1 = 0
            y0 = s_ - 1
            if y0 < 0:
                y0 = L - 1
            r_up = theta * c * (d + occ[y1])
            r_dn = theta * c * (d + occ[y0])
            rates[2 * j] = r_up
            rates[2 * j + 1] = r_dn
            total += r_up + r_dn
        if total <= 0.0:
            status = STATUS_DEAD
            break

        dt = _next_exp(rng) / total

        if t_raw_max > 0.0 and t_raw + dt >= t_raw_max:
            if in_E:
                t_trace += t_raw_max - t_raw
            t_raw = t_raw_max
            status = STATUS_RAW_LIMIT
            break
        if in_E and t_trace_max > 0.0 and t_trace + dt >= t_trace_max:
            t_raw += t_trace_max - t_trace
            t_trace = t_trace_max
            status = STATUS_TRACE_LIMIT
            break
        if (
            in_E
            and prev_ell == 1
            and t_trace_soft >= 0.0
            and t_trace + dt >= t_trace_soft
        ):
            t_raw += t_trace_soft - t_trace
            t_trace = t_trace_soft
            status = STATUS_SOFT_STOP
            break

        t_raw += dt
        if in_E:
            t_trace += dt

        u = _next_unit(rng) * total
        acc = 0.0
        idx = 2 * n_occ - 1
        for j in range(2 * n_occ):
            acc += rates[j]
            if u < acc:
                idx = j
                break
        jsite = idx >> 1
        src = sites[jsite]
        if idx & 1 == 0:
            dst = src + 1
            if dst == L:
                dst = 0
        else:
            dst = src - 1
            if dst < 0:
                dst = L - 1

        occ[src] -= 1
        if occ[src] == 0:
            p = site_pos[src]
            last = sites[n_occ - 1]
            sites[p] = last
            site_pos[last] = p
            site_pos[src] = -1
            n_occ -= 1
        occ[dst] += 1
        if occ[dst] == 1:
            sites[n_occ] = dst
            site_pos[dst] = n_occ
            n_occ += 1
        n_events += 1

        ell = _isolated_sorted(occ, sites, n_occ, k, L, cur_sites, cur_masses)
        if ell > 0:
            changed = ell != prev_ell
            if not changed:
                for j in range(ell):
                    if cur_sites[j] != prev_sites[j] or cur_masses[j] != prev_masses[j]:
                        changed = True
                        break
            if changed:
                if n_rec >= max_rec:
                    status = STATUS_OVERFLOW
                    break
                rec_t_raw[n_rec] = t_raw
                rec_t_trace[n_rec] = t_trace
                rec_ell[n_rec] = ell
                for j in range(ell):
                    rec_sites[n_rec, j] = cur_sites[j]
                    rec_masses[n_rec, j] = cur_masses[j]
                for j in range(ell, k):
                    rec_sites[n_rec, j] = -1
                    rec_masses[n_rec, j] = -1
                n_rec += 1
                prev_ell = ell
                for j in range(ell):
                    prev_sites[j] = cur_sites[j]
                    prev_masses[j] = cur_masses[j]
            in_E = True
        else:
            if in_E:
                n_exits += 1
            in_E = False

    return status, n_rec, t_raw, t_trace, n_exits, n_events


@njit(cache=True)
def occupation_kernel(occ, theta, d, rng, t_end, weights, powvec):
    """Accumulate occupation time per encoded state over [0, t_end].

    States are encoded as sum_x occ[x] * powvec[x]; weights is indexed by the
    code and incremented by holding times. occ and rng are advanced in place
    so consecutive calls continue one trajectory (batch means).
    Returns the number of events executed.
    """
    L = occ.shape[0]
    sites = np.empty(L, dtype=np.int64)
    site_pos = np.full(L, -1, dtype=np.int64)
    n_occ = 0
    code = 0
    for x in range(L):
        code += occ[x] * powvec[x]
        if occ[x] > 0:
            sites[n_occ] = x
            site_pos[x] = n_occ
            n_occ += 1

    rates = np.empty(2 * L, dtype=np.float64)
    t = 0.0
    n_events = 0
    while True:
        total = 0.0
        for j in range(n_occ):
            s_ = sites[j]
            c = occ[s_]
            y1 = s_ + 1
            if y1 == L:
                y1 = 0
            y0 = s_ - 1
            if y0 < 0:
                y0 = L - 1
            r_up = theta * c * (d + occ[y1])
            r_dn = theta * c * (d + occ[y0])
            rates[2 * j] = r_up
            rates[2 * j + 1] = r_dn
            total += r_up + r_dn
        if total <= 0.0:
            weights[code] += t_end - t
            break

        dt = _next_exp(rng) / total
        if t + dt >= t_end:
            weights[code] += t_end - t
            break
        weights[code] += dt
        t += dt

        u = _next_unit(rng) * total
        acc = 0.0
        idx = 2 * n_occ - 1
        for j in range(2 * n_occ):
            acc += rates[j]
            if u < acc:
                idx = j
                break
        jsite = idx >> 1
        src = sites[jsite]
        if idx & 1 == 0:
            dst = src + 1
            if dst == L:
                dst = 0
        else:
            dst = src - 1
            if dst < 0:
                dst = L - 1

        occ[src] -= 1
        if occ[src] == 0:
            p = site_pos[src]
            last = sites[n_occ - 1]
            sites[p] = last
            site_pos[last] = p
            site_pos[src] = -1
            n_occ -= 1
        occ[dst] += 1
        if occ[dst] == 1:
            sites[n_occ] = dst
            site_pos[dst] = n_occ
            n_occ += 1
        code += powvec[dst] - powvec[src]
        n_events += 1
    return n_events


@njit(cache=True)
def resolvent_mc_kernel(occ, theta, d, k, rng, lam, t_max):
    """Path functional integral of exp(-lam*t) * (state not condensed) dt
    over [0, t_max]. occ is consumed (modified in place)."""
    L = occ.shape[0]
    sites = np.empty(L, dtype=np.int64)
    site_pos = np.full(L, -1, dtype=np.int64)
    n_occ = 0
    for x in range(L):
        if occ[x] > 0:
            sites[n_occ] = x
            site_pos[x] = n_occ
            n_occ += 1

    rates = np.empty(2 * L, dtype=np.float64)
    cur_sites = np.empty(k, dtype=np.int64)
    cur_masses = np.empty(k, dtype=np.int64)
    in_E = _isolated_sorted(occ, sites, n_occ, k, L, cur_sites, cur_masses) > 0

    t = 0.0
    value = 0.0
    while True:
        total = 0.0
        for j in range(n_occ):
            s_ = sites[j]
            c = occ[s_]
            y1 = s_ + 1
            if y1 == L:
                y1 = 0
            y0 = s_ - 1
            if y0 < 0:
                y0 = L - 1
            r_up = theta * c * (d + occ[y1])
            r_dn = theta * c * (d + occ[y0])
            rates[2 * j] = r_up
            rates[2 * j + 1] = r_dn
            total += r_up + r_dn
        if total <= 0.0:
            if not in_E:
                value += (math.exp(-lam * t) - math.exp(-lam * t_max)) / lam
            break

        dt = _next_exp(rng) / total
        t_next = t + dt
        last = t_next >= t_max
        if last:
            t_next = t_max
        if not in_E:
            value += (math.exp(-lam * t) - math.exp(-lam * t_next)) / lam
        if last:
            break
        t = t_next

        u = _next_unit(rng) * total
        acc = 0.0
        idx = 2 * n_occ - 1
        for j in range(2 * n_occ):
            acc += rates[j]
            if u < acc:
                idx = j
                break
        jsite = idx >> 1
        src = sites[jsite]
        if idx & 1 == 0:
            dst = src + 1
            if dst == L:
                dst = 0
        else:
            dst = src - 1
            if dst < 0:
                dst = L - 1

        occ[src] -= 1
        if occ[src] == 0:
            p = site_pos[src]
            last_site = sites[n_occ - 1]
            sites[p] = last_site
            site_pos[last_site] = p
            site_pos[src] = -1
            n_occ -= 1
        occ[dst] += 1
        if occ[dst] == 1:
            sites[n_occ] = dst
            site_pos[dst] = n_occ
            n_occ += 1

        in_E = _isolated_sorted(occ, sites, n_occ, k, L, cur_sites, cur_masses) > 0
    return value


@njit(cache=True)
def bd_walk_kernel(M, theta, d, edge, i0, n_walks, rng):
    """Batch of birth-death walks on [0, M] absorbed at both ends.

    Up-rate a_i = theta*(M-i)*(i+d); down-rate b_i = theta*i*(M-i+d) for the
    inner variant, theta*i*(M-i+2d) for the edge variant. Returns the count of
    walks absorbed at M and the first two moments of the absorption time.
    """
    n_hi = 0
    sum_t = 0.0
    sum_t2 = 0.0
    for _ in range(n_walks):
        i = i0
        t = 0.0
        while 0 < i < M:
            a = theta * (M - i) * (i + d)
            if edge:
                b = theta * i * (M - i + 2.0 * d)
            else:
                b = theta * i * (M - i + d)
            tot = a + b
            t += _next_exp(rng) / tot
            if _next_unit(rng) * tot < a:
                i += 1
            else:
                i -= 1
        if i == M:
            n_hi += 1
        sum_t += t
        sum_t2 += t * t
    return n_hi, sum_t, sum_t2
