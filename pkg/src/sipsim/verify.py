"""Quantitative finite-size checks of the scaling-limit statements.

The functions here turn the simulator, the exhaustive small-system solver,
and the circle-diffusion sampler into numbers with error bars:

  * theorem1_stat    occupation fraction outside the condensed set
  * theorem2_stat    probability of an atypical trace jump before time T
  * theorem4_compare labeled condensate paths vs coalescing circle
                     diffusions (coalescence time, marginals, cluster count)
  * time_change_stat overshoot of the inverse trace clock

plus the suite runners behind the command line (detailed-balance,
exact-small, cbm-selfcheck, bd-oracle and the three theorem suites). Every
statistic is seeded from (master_seed, replica_index), so reports are
reproducible bit for bit; the theorem suites share one trajectory stream
per replica index, which makes exclusion counts comparable across suites
by construction.

The limits being probed are N -> infinity statements. Thresholds here are
configuration, not theory: they are recorded in every report.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy import stats as sstats

from . import bdchain, cbm, exact
from ._kernels import (
    STATUS_DEAD,
    STATUS_OVERFLOW,
    STATUS_RAW_LIMIT,
    STATUS_SOFT_STOP,
    STATUS_TRACE_LIMIT,
    kernel_seed,
    occupation_kernel,
    resolvent_mc_kernel,
    sip_trace_kernel,
)
from .condensate import (
    CondensedView,
    LabeledState,
    LabeledTraceTracker,
    classify,
)
from .engine import replica_rng, step as engine_step
from .model import Configuration, ModelParams, apply_jump, jump_rate, log_mu

__all__ = [
    "EmptySampleError",
    "InsufficientDataError",
    "ks_two_sample",
    "kuiper_two_sample",
    "clopper_pearson_upper",
    "theorem1_stat",
    "theorem2_stat",
    "theorem4_compare",
    "time_change_stat",
    "coupling_stat",
    "run_suite",
    "SUITES",
]

# one shared trajectory stream per replica index across the theorem suites
KERNEL_TAG = 0

# rng stream index reserved for the continuum side, far above replica counts
CBM_STREAM = 1_000_000_007

DEFAULT_SEED = 20240811


class EmptySampleError(ValueError):
    pass


class InsufficientDataError(RuntimeError):
    """Fewer effective replicas than the comparison needs."""


def ks_two_sample(sample_a, sample_b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic, sup |F_a - F_b|."""
    a = np.sort(np.asarray(sample_a, dtype=np.float64))
    b = np.sort(np.asarray(sample_b, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise EmptySampleError("both samples must be non-empty")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.abs(fa - fb).max())


def kuiper_two_sample(sample_a, sample_b) -> float:
    """Kuiper statistic sup(F_a-F_b) + sup(F_b-F_a); rotation-invariant on
    the circle where plain KS is not."""
    a = np.sort(np.asarray(sample_a, dtype=np.float64))
    b = np.sort(np.asarray(sample_b, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise EmptySampleError("both samples must be non-empty")
    grid = np.concatenate([a, b])
    diff = (
        np.searchsorted(a, grid, side="right") / a.size
        - np.searchsorted(b, grid, side="right") / b.size
    )
    return float(diff.max() + (-diff).max())


def clopper_pearson_upper(successes: int, n: int, conf: float = 0.95) -> float:
    """One-sided upper confidence bound for a binomial proportion."""
    if n <= 0:
        raise ValueError("n must be positive")
    if successes >= n:
        return 1.0
    return float(sstats.beta.ppf(conf, successes + 1, n - successes))


# ---------------------------------------------------------------------------
# replica plumbing


@dataclass
class TraceRun:
    status: int
    t_raw: float
    t_trace: float
    n_exits: int
    n_events: int
    rec_t_trace: np.ndarray
    rec_ell: np.ndarray
    rec_sites: np.ndarray
    rec_masses: np.ndarray

    @property
    def n_rec(self) -> int:
        return self.rec_t_trace.shape[0]


def _estimate_rec_cap(params: ModelParams, horizon: float) -> int:
    # trace jumps arrive at about 2*ell*N^2 per unit trace time
    return int(8 * params.k * params.N**2 * max(horizon, 0.0)) + 4096


def run_trace_replica(
    params: ModelParams,
    eta0: Configuration,
    master_seed: int,
    replica_index: int,
    t_raw_max: float = 0.0,
    t_trace_max: float = 0.0,
    t_trace_soft: float = -1.0,
    rec_cap: Optional[int] = None,
    allow_overflow: bool = False,
) -> TraceRun:
    """One compiled trajectory with automatic record-buffer growth.

    The rng state is reconstructed from scratch on a retry, so the returned
    trajectory is the same one, just with enough room for its records. With
    allow_overflow the run is returned as soon as the buffer fills instead
    (useful for capturing just the first few trace jumps cheaply).
    """
    horizon = t_trace_max if t_trace_max > 0 else t_raw_max
    cap = rec_cap or _estimate_rec_cap(params, horizon)
    while True:
        occ = np.array(eta0.occupancy, dtype=np.int64)
        rng = kernel_seed(master_seed, replica_index, tag=KERNEL_TAG)
        rec_t_raw = np.empty(cap, dtype=np.float64)
        rec_t_trace = np.empty(cap, dtype=np.float64)
        rec_ell = np.empty(cap, dtype=np.int64)
        rec_sites = np.empty((cap, params.k), dtype=np.int64)
        rec_masses = np.empty((cap, params.k), dtype=np.int64)
        status, n_rec, t_raw, t_trace, n_exits, n_events = sip_trace_kernel(
            occ,
            params.theta_N,
            params.d_N,
            params.k,
            rng,
            t_raw_max,
            t_trace_max,
            t_trace_soft,
            rec_t_raw,
            rec_t_trace,
            rec_ell,
            rec_sites,
            rec_masses,
        )
        if status != STATUS_OVERFLOW or allow_overflow:
            return TraceRun(
                status=status,
                t_raw=t_raw,
                t_trace=t_trace,
                n_exits=n_exits,
                n_events=n_events,
                rec_t_trace=rec_t_trace[:n_rec].copy(),
                rec_ell=rec_ell[:n_rec].copy(),
                rec_sites=rec_sites[:n_rec].copy(),
                rec_masses=rec_masses[:n_rec].copy(),
            )
        cap *= 2


def _record_view(run: TraceRun, i: int) -> CondensedView:
    ell = int(run.rec_ell[i])
    return CondensedView(
        ell=ell,
        positions=tuple(int(s) for s in run.rec_sites[i, :ell]),
        masses=tuple(int(m) for m in run.rec_masses[i, :ell]),
    )


def _labeled_start(params: ModelParams, eta0: Configuration) -> LabeledState:
    view = classify(params, eta0)
    if view is None:
        raise ValueError("initial configuration is not condensed")
    if view.ell != params.k:
        raise ValueError(
            f"labeling needs one pile per label: {view.ell} piles for k={params.k}"
        )
    return LabeledState.from_view(view, params.k)


# ---------------------------------------------------------------------------
# statistics


def theorem1_stat(
    params: ModelParams,
    eta0: Configuration,
    T: float,
    replicas: int,
    master_seed: int = DEFAULT_SEED,
) -> dict:
    """Mean fraction of raw time spent outside the condensed set on [0, T]."""
    if classify(params, eta0) is None:
        raise ValueError("eta0 must be condensed")
    if T == 0.0:
        return {
            "T": 0.0,
            "replicas": replicas,
            "fraction": 0.0,
            "stderr": 0.0,
            "per_replica": [0.0] * replicas,
        }
    fractions = np.empty(replicas)
    exits = np.empty(replicas, dtype=np.int64)
    for r in range(replicas):
        run = run_trace_replica(
            params, eta0, master_seed, r, t_raw_max=T
        )
        if run.status != STATUS_RAW_LIMIT:
            raise RuntimeError(f"replica {r} ended with status {run.status}")
        fractions[r] = 1.0 - run.t_trace / run.t_raw
        exits[r] = run.n_exits
    return {
        "T": T,
        "replicas": replicas,
        "fraction": float(fractions.mean()),
        "stderr": float(fractions.std(ddof=1) / math.sqrt(replicas)),
        "mean_exits": float(exits.mean()),
        "per_replica": [float(v) for v in fractions],
    }


def _replay_labeled(
    params: ModelParams,
    start: LabeledState,
    run: TraceRun,
    probes: Sequence[float] = (),
):
    """Feed a replica's records through the label tracker.

    Returns (tracker, snapshots) where snapshots[i] holds, for probe time
    probes[i], the per-label unwrapped displacement in circle units and the
    distinct-pile count, both read off the last trace state at or before
    that time.
    """
    tracker = LabeledTraceTracker(params, start)
    probes = sorted(probes)
    snaps: list = [None] * len(probes)
    pi = 0

    def snap():
        disp = [dx / params.L for dx in tracker.displacements]
        return disp, len(set(tracker.state.positions))

    for i in range(run.n_rec):
        t = float(run.rec_t_trace[i])
        while pi < len(probes) and t > probes[pi]:
            snaps[pi] = snap()
            pi += 1
        if not tracker.update(t, _record_view(run, i)):
            break
    while pi < len(probes):
        snaps[pi] = snap()
        pi += 1
    return tracker, snaps


def theorem2_stat(
    params: ModelParams,
    eta0: Configuration,
    T: float,
    replicas: int,
    master_seed: int = DEFAULT_SEED,
) -> dict:
    """Fraction of replicas whose labeled trace makes an atypical jump by
    trace time T, with a Clopper-Pearson 95% upper bound."""
    start = _labeled_start(params, eta0)
    if T == 0.0:
        return {
            "T": 0.0,
            "replicas": replicas,
            "n_atypical": 0,
            "estimate": 0.0,
            "stderr": 0.0,
            "upper95": clopper_pearson_upper(0, replicas),
            "atypical_times": [],
        }
    flags = []
    atypical_times = []
    for r in range(replicas):
        run = run_trace_replica(
            params, eta0, master_seed, r, t_trace_max=T
        )
        tracker, _ = _replay_labeled(params, start, run)
        flags.append(bool(tracker.atypical))
        if tracker.atypical:
            atypical_times.append(float(tracker.atypical_t))
    n_atypical = sum(flags)
    p_hat = n_atypical / replicas
    return {
        "T": T,
        "replicas": replicas,
        "n_atypical": n_atypical,
        "estimate": p_hat,
        "stderr": math.sqrt(max(p_hat * (1 - p_hat), 0.0) / replicas),
        "upper95": clopper_pearson_upper(n_atypical, replicas),
        "per_replica_atypical": flags,
        "atypical_times": atypical_times,
    }


def time_change_stat(
    params: ModelParams,
    eta0: Configuration,
    t: float,
    replicas: int,
    master_seed: int = DEFAULT_SEED,
    a_grid: Sequence[float] = (0.0, 0.01, 0.02, 0.05, 0.1),
) -> dict:
    """Tail of the overshoot S(t) - t, where S(t) is the raw time at which
    the trace clock reaches t. S(t) >= t always; the overshoot is the raw
    time burned in excursions."""
    if classify(params, eta0) is None:
        raise ValueError("eta0 must be condensed")
    overshoot = np.empty(replicas)
    for r in range(replicas):
        run = run_trace_replica(
            params, eta0, master_seed, r, t_trace_max=t
        )
        if run.status != STATUS_TRACE_LIMIT:
            raise RuntimeError(f"replica {r} ended with status {run.status}")
        overshoot[r] = run.t_raw - run.t_trace
    tail = {float(a): float((overshoot >= a).mean()) for a in a_grid}
    return {
        "t": t,
        "replicas": replicas,
        "mean_overshoot": float(overshoot.mean()),
        "stderr": float(overshoot.std(ddof=1) / math.sqrt(replicas)),
        "tail": tail,
    }


def _lattice_round(values: np.ndarray, L: int) -> np.ndarray:
    return np.round(values * L) / L


def theorem4_compare(
    params: ModelParams,
    start: LabeledState,
    probe_times: Sequence[float],
    replicas: int,
    master_seed: int = DEFAULT_SEED,
    cbm_dt: float = 1e-4,
    t_cap: float = 0.5,
    ks_threshold: float = 0.05,
    cluster_z_threshold: float = 3.0,
    lattice_match: bool = True,
    cbm_replicas: Optional[int] = None,
) -> dict:
    """Compare labeled condensate paths against coalescing circle diffusions.

    Both ensembles run on their own clock (the trace clock on the particle
    side). Compared, per configured thresholds:

      * first coalescence time, censored at t_cap on both sides (k=2);
      * unwrapped per-label displacement at each probe time, two-sample KS
        (against the exact normal law when k=1); when lattice_match is on,
        the continuum samples are rounded to the 1/L grid the particle side
        lives on, and the unrounded KS is reported alongside;
      * merged-cluster fraction at each probe, binomial z (k=2).

    Replicas whose label tracking hit an atypical jump are excluded and
    counted. Kuiper statistics are reported, not thresholded.
    """
    start.validate(params)
    if params.k != start.k:
        raise ValueError("start must carry exactly k labels")
    if params.k > 2:
        raise NotImplementedError("comparison implemented for k in {1, 2}")
    probes = sorted(float(t) for t in probe_times)
    if not probes:
        return {
            "checks": [],
            "pass": True,
            "replicas": replicas,
            "excluded": 0,
            "note": "no probe times requested",
        }
    max_probe = probes[-1]
    if t_cap < max_probe:
        raise ValueError("t_cap must cover the last probe time")
    if replicas < 100:
        raise InsufficientDataError(
            f"only {replicas} effective particle replicas (need >= 100)"
        )
    n_cbm = cbm_replicas or replicas
    k = params.k
    rho = params.rho
    L = params.L

    eta0 = Configuration.from_sites(
        L, list(zip(start.positions, start.masses))
    )

    # particle side ------------------------------------------------------
    disp = np.full((len(probes), replicas, k), np.nan)
    merged = np.zeros((len(probes), replicas), dtype=bool)
    tau = np.full(replicas, t_cap)
    excluded = np.zeros(replicas, dtype=bool)
    atypical_times: list[float] = []
    for r in range(replicas):
        run = run_trace_replica(
            params,
            eta0,
            master_seed,
            r,
            t_trace_max=t_cap,
            t_trace_soft=max_probe,
        )
        if run.status not in (STATUS_SOFT_STOP, STATUS_TRACE_LIMIT):
            raise RuntimeError(f"replica {r} ended with status {run.status}")
        tracker, snaps = _replay_labeled(params, start, run, probes)
        if tracker.atypical:
            excluded[r] = True
            atypical_times.append(float(tracker.atypical_t))
            continue
        if tracker.merge_times:
            tau[r] = tracker.merge_times[0]
        for pi, (d_vec, n_piles) in enumerate(snaps):
            disp[pi, r] = d_vec
            merged[pi, r] = n_piles < k
    keep = ~excluded
    n_eff = int(keep.sum())
    if n_eff < 100:
        raise InsufficientDataError(
            f"only {n_eff} effective particle replicas (need >= 100)"
        )

    checks = []

    def add(name, value, threshold, passed, **extra):
        entry = {
            "name": name,
            "value": float(value),
            "threshold": float(threshold),
            "pass": bool(passed),
            "seed": master_seed,
        }
        entry.update(extra)
        checks.append(entry)

    # continuum side and comparisons --------------------------------------
    if k == 1:
        for pi, t in enumerate(probes):
            sample = disp[pi, keep, 0]
            sd = math.sqrt(2.0 * rho**2 * t)
            ks = float(sstats.kstest(sample, sstats.norm(0.0, sd).cdf).statistic)
            add(f"marginal_label1_t{t:g}", ks, ks_threshold, ks <= ks_threshold)
        report_gate = None
    else:
        if n_cbm < 100:
            raise InsufficientDataError(
                f"only {n_cbm} continuum replicas (need >= 100)"
            )
        u0 = tuple(x / L for x in start.positions)
        rng = replica_rng(master_seed, CBM_STREAM)
        ens = cbm.sample_pair_ensemble(
            rho, u0, cbm_dt, n_cbm, rng, t_cap, probe_times=probes
        )
        # gate: the continuum ensemble must match its own closed-form law
        # before it is allowed to judge the particle system
        gap0 = cbm.torus_gap(u0[0], u0[1])
        p_exact, mean_exact = cbm.pair_exit_law(gap0, rho)
        done = ~ens.censored
        mean_tau = float(ens.tau[done].mean())
        se_tau = float(ens.tau[done].std(ddof=1) / math.sqrt(done.sum()))
        p_hat = float(ens.hit_zero[done].mean())
        se_p = math.sqrt(p_exact * (1 - p_exact) / done.sum())
        gate_ok = (
            abs(mean_tau - mean_exact) <= 3 * se_tau
            and abs(p_hat - p_exact) <= 3 * se_p
        )
        report_gate = {
            "mean_tau": mean_tau,
            "mean_tau_exact": mean_exact,
            "mean_tau_se": se_tau,
            "dir_prob": p_hat,
            "dir_prob_exact": p_exact,
            "dir_prob_se": se_p,
            "pass": gate_ok,
        }
        if not gate_ok:
            raise RuntimeError(
                f"continuum sampler failed its own exit-law gate: {report_gate}"
            )

        tau_cbm = np.where(ens.censored, t_cap, ens.tau)
        ks_tau = ks_two_sample(tau[keep], tau_cbm)
        add(
            "first_coalescence_ks",
            ks_tau,
            ks_threshold,
            ks_tau <= ks_threshold,
            kuiper=kuiper_two_sample(tau[keep], tau_cbm),
        )

        lift0 = np.array([u0[0], u0[0] + gap0])
        for pi, t in enumerate(probes):
            cbm_disp = ens.probe_lifts[pi] - lift0[None, :]
            for lbl in range(k):
                sip_sample = disp[pi, keep, lbl]
                cont = cbm_disp[:, lbl]
                raw_ks = ks_two_sample(sip_sample, cont)
                used = (
                    ks_two_sample(sip_sample, _lattice_round(cont, L))
                    if lattice_match
                    else raw_ks
                )
                add(
                    f"marginal_label{lbl + 1}_t{t:g}",
                    used,
                    ks_threshold,
                    used <= ks_threshold,
                    raw_ks=raw_ks,
                    kuiper=kuiper_two_sample(sip_sample, cont),
                )
            p_sip = float(merged[pi, keep].mean())
            p_cbm = float(ens.probe_merged[pi].mean())
            pool = (merged[pi, keep].sum() + ens.probe_merged[pi].sum()) / (
                n_eff + n_cbm
            )
            se = math.sqrt(
                max(pool * (1 - pool), 1e-12) * (1 / n_eff + 1 / n_cbm)
            )
            z = abs(p_sip - p_cbm) / se
            add(
                f"cluster_fraction_t{t:g}",
                z,
                cluster_z_threshold,
                z <= cluster_z_threshold,
                p_particle=p_sip,
                p_continuum=p_cbm,
            )

    n_excl = int(excluded.sum())

    def _listify(arr):
        return [None if (isinstance(v, float) and math.isnan(v)) else v
                for v in arr]

    per_replica = {
        "particle": {
            "excluded": [bool(v) for v in excluded],
            "tau": [float(v) for v in tau],
            "disp": [
                [_listify(float(x) for x in disp[pi, r])
                 for r in range(replicas)]
                for pi in range(len(probes))
            ],
            "merged": [[bool(v) for v in merged[pi]] for pi in range(len(probes))],
        }
    }
    if k == 2:
        per_replica["continuum"] = {
            "tau": [float(v) for v in np.where(ens.censored, t_cap, ens.tau)],
            "hit_zero": [bool(v) for v in ens.hit_zero],
            "lifts": [
                [[float(x) for x in ens.probe_lifts[pi, r]]
                 for r in range(n_cbm)]
                for pi in range(len(probes))
            ],
            "merged": [
                [bool(v) for v in ens.probe_merged[pi]]
                for pi in range(len(probes))
            ],
            "lift0": [float(v) for v in lift0],
        }

    return {
        "params": {
            "N": params.N,
            "L": params.L,
            "d_N": params.d_N,
            "k": params.k,
            "rho": rho,
        },
        "probe_times": probes,
        "replicas": replicas,
        "cbm_replicas": n_cbm if k == 2 else 0,
        "effective_replicas": n_eff,
        "excluded": n_excl,
        "excluded_by_last_probe": sum(
            1 for t in atypical_times if t <= max_probe
        ),
        "t_cap": t_cap,
        "cbm_dt": cbm_dt,
        "lattice_match": lattice_match,
        "thresholds": {
            "ks": ks_threshold,
            "cluster_z": cluster_z_threshold,
        },
        "gate": report_gate,
        "checks": checks,
        "per_replica": per_replica,
        "pass": all(c["pass"] for c in checks),
    }


# ---------------------------------------------------------------------------
# excursion/chain coupling


def coupling_stat(
    variant: str,
    N: int,
    d_N: float,
    excursions: int,
    master_seed: int = DEFAULT_SEED,
    L: Optional[int] = None,
) -> dict:
    """Drive raw excursions with the reference engine and compare their
    outcome against the matching absorbed chain.

    inner: a pile of N splits over two adjacent sites after one particle
    steps right; the count on the target site is the inner chain from 1,
    absorbed when the pile re-forms (target site holds 0 or N).

    edge: two piles of N/2 at distance 2; one particle steps into the middle
    site, whose count is the edge chain from 1 with M = N, absorbed at 0
    (retreat to two piles) or M (merge onto the middle).

    Uses the interpreted engine on purpose: it exercises the reference path
    of the simulator against closed-form chain answers, independently of the
    compiled kernels.
    """
    L = L or max(2 * N, 8)
    params = ModelParams(N=N, L=L, d_N=d_N, k=2)
    spec = bdchain.BDSpec(M=N, theta=params.theta_N, d=d_N, variant=variant)
    p_exact = bdchain.absorb_prob(spec, 1)
    eh_exact = bdchain.expected_hitting(spec, 1)

    if variant == "inner":
        x0, x1 = 0, 1
        base = {0: N - 1, 1: 1}
        watch = x1  # count here is the chain state
    else:
        half = N // 2
        base = {0: half - 1, 1: 1, 2: N - half}
        watch = 1

    hits = 0
    durations = np.empty(excursions)
    leaked = 0
    allowed = set(base)
    for r in range(excursions):
        rng = replica_rng(master_seed, r)
        eta = Configuration.from_sites(L, list(base.items()))
        t = 0.0
        while True:
            count = int(eta.occupancy[watch])
            if count == 0 or count == N:
                break
            dt, ev, eta = engine_step(params, eta, rng)
            t += dt
            if any(
                int(s) not in allowed for s in eta.occupied_sites()
            ):
                leaked += 1
                break
        count = int(eta.occupancy[watch])
        if count == N:
            hits += 1
        durations[r] = t
    n = excursions
    p_hat = hits / n
    se_p = math.sqrt(p_exact * (1 - p_exact) / n)
    mean_t = float(durations.mean())
    se_t = float(durations.std(ddof=1) / math.sqrt(n))
    return {
        "variant": variant,
        "N": N,
        "M": N,
        "d_N": d_N,
        "excursions": n,
        "leaked": leaked,
        "p_hat": p_hat,
        "p_exact": p_exact,
        "p_z": abs(p_hat - p_exact) / se_p,
        "mean_t": mean_t,
        "t_exact": eh_exact,
        "t_z": abs(mean_t - eh_exact) / max(se_t, 1e-300),
    }


# ---------------------------------------------------------------------------
# suites


def _check_entry(name, value, threshold, passed, seed, comparison="<=", **extra):
    entry = {
        "name": name,
        "value": value,
        "threshold": threshold,
        "comparison": comparison,
        "pass": bool(passed),
        "seed": seed,
    }
    entry.update(extra)
    return entry


def _merge_config(defaults: dict, cfg: Optional[dict]) -> dict:
    out = dict(defaults)
    for key, val in (cfg or {}).items():
        out[key] = val
    return out


def suite_theorem1(cfg: Optional[dict] = None) -> dict:
    defaults = {
        "N": 32,
        "L": 32,
        "d_N": 1e-7,
        "k": 1,
        "T": 1.0,
        "replicas": 100,
        "master_seed": DEFAULT_SEED,
        "threshold": 0.01,
        "paired_dn_check": True,
    }
    c = _merge_config(defaults, cfg)
    params = ModelParams(N=c["N"], L=c["L"], d_N=c["d_N"], k=c["k"])
    eta0 = Configuration.from_sites(c["L"], [(0, c["N"])])
    seed = c["master_seed"]
    res = theorem1_stat(params, eta0, c["T"], c["replicas"], seed)
    checks = [
        _check_entry(
            "occupation_fraction_outside",
            res["fraction"],
            c["threshold"],
            res["fraction"] < c["threshold"],
            seed,
            comparison="<",
            stderr=res["stderr"],
        )
    ]
    if c["paired_dn_check"]:
        params_lo = ModelParams(N=c["N"], L=c["L"], d_N=c["d_N"] / 10, k=c["k"])
        res_lo = theorem1_stat(params_lo, eta0, c["T"], c["replicas"], seed)
        checks.append(
            _check_entry(
                "fraction_decreases_with_d_N",
                res_lo["fraction"],
                res["fraction"],
                res_lo["fraction"] <= res["fraction"],
                seed,
                comparison="<=",
                d_N_low=c["d_N"] / 10,
            )
        )
    return {
        "suite": "theorem1",
        "config": c,
        "stat": {k_: v for k_, v in res.items() if k_ != "per_replica"},
        "checks": checks,
        "pass": all(ch["pass"] for ch in checks),
    }


def suite_theorem2(cfg: Optional[dict] = None) -> dict:
    defaults = {
        "N": 32,
        "L": 32,
        "d_N": 1e-7,
        "k": 1,
        "T": 1.0,
        "replicas": 400,
        "master_seed": DEFAULT_SEED,
        "threshold": 0.05,
    }
    c = _merge_config(defaults, cfg)
    params = ModelParams(N=c["N"], L=c["L"], d_N=c["d_N"], k=c["k"])
    eta0 = Configuration.from_sites(c["L"], [(0, c["N"])])
    seed = c["master_seed"]
    res = theorem2_stat(params, eta0, c["T"], c["replicas"], seed)
    checks = [
        _check_entry(
            "atypical_upper95",
            res["upper95"],
            c["threshold"],
            res["upper95"] <= c["threshold"],
            seed,
            estimate=res["estimate"],
            n_atypical=res["n_atypical"],
        )
    ]
    return {
        "suite": "theorem2",
        "config": c,
        "stat": {k_: v for k_, v in res.items() if k_ != "atypical_times"},
        "checks": checks,
        "pass": all(ch["pass"] for ch in checks),
    }


def _theorem4_params(c: dict) -> tuple[ModelParams, LabeledState]:
    params = ModelParams(N=c["N"], L=c["L"], d_N=c["d_N"], k=2)
    half = c["L"] // 2
    n1 = c["N"] // 2
    start = LabeledState(positions=(0, half), masses=(n1, c["N"] - n1))
    return params, start


def suite_theorem4(cfg: Optional[dict] = None) -> dict:
    defaults = {
        "N": 64,
        "L": 64,
        "d_N": 1e-8,
        "probe_times": [0.02, 0.05],
        "replicas": 2000,
        "master_seed": DEFAULT_SEED,
        "ks_threshold": 0.05,
        "cbm_dt": 1e-4,
        "t_cap": 0.5,
        "lattice_match": True,
        "budget_s": float(os.environ.get("SIPSIM_T4_BUDGET", "7200")),
        "pilot_replicas": 20,
        "fallback": "auto",  # auto | never | force
        "fallback_N": 32,
        "fallback_ks_threshold": 0.07,
    }
    c = _merge_config(defaults, cfg)
    if cfg and "N" in cfg and "L" not in cfg:
        c["L"] = c["N"]
    seed = c["master_seed"]
    if c["replicas"] < 100:
        raise InsufficientDataError(
            f"only {c['replicas']} effective particle replicas (need >= 100)"
        )

    use_fallback = c["fallback"] == "force"
    if c["fallback"] == "auto":
        params, start = _theorem4_params(c)
        eta0 = Configuration.from_sites(
            c["L"], list(zip(start.positions, start.masses))
        )
        t0 = time.perf_counter()
        for r in range(int(c["pilot_replicas"])):
            run_trace_replica(
                params,
                eta0,
                seed,
                r,
                t_trace_max=c["t_cap"],
                t_trace_soft=max(c["probe_times"]),
            )
        pilot_dt = time.perf_counter() - t0
        projected = pilot_dt / max(c["pilot_replicas"], 1) * c["replicas"] * 1.3
        use_fallback = projected > c["budget_s"]

    resolved = dict(c)
    if use_fallback:
        resolved["N"] = c["fallback_N"]
        resolved["L"] = c["fallback_N"]
        resolved["ks_threshold"] = c["fallback_ks_threshold"]
    params, start = _theorem4_params(resolved)
    report = theorem4_compare(
        params,
        start,
        resolved["probe_times"],
        resolved["replicas"],
        seed,
        cbm_dt=resolved["cbm_dt"],
        t_cap=resolved["t_cap"],
        ks_threshold=resolved["ks_threshold"],
        lattice_match=resolved["lattice_match"],
    )
    # wall-clock measurements stay out of the report so identical configs
    # serialize identically
    report["suite"] = "theorem4"
    report["fallback"] = bool(use_fallback)
    report["config"] = {
        k_: v for k_, v in resolved.items() if k_ != "budget_s"
    }
    return report


def suite_detailed_balance(cfg: Optional[dict] = None) -> dict:
    defaults = {
        "N": 16,
        "L": 12,
        "d_N": 1e-4,
        "k": 2,
        "n_configs": 1000,
        "master_seed": DEFAULT_SEED,
        "tolerance": 1e-10,
    }
    c = _merge_config(defaults, cfg)
    params = ModelParams(N=c["N"], L=c["L"], d_N=c["d_N"], k=c["k"])
    rng = replica_rng(c["master_seed"], 0)
    worst = 0.0
    for _ in range(c["n_configs"]):
        occ = rng.multinomial(c["N"], np.full(c["L"], 1.0 / c["L"]))
        eta = Configuration(np.array(occ, dtype=np.int64))
        sites = eta.occupied_sites()
        x = int(sites[rng.integers(len(sites))])
        direction = 1 if rng.random() < 0.5 else -1
        eta2 = apply_jump(eta, x, direction)
        y = (x + direction) % c["L"]
        forward = log_mu(params, eta) + math.log(
            jump_rate(params, eta, x, direction)
        )
        backward = log_mu(params, eta2) + math.log(
            jump_rate(params, eta2, y, -direction)
        )
        rel = abs(forward - backward) / max(1.0, abs(forward), abs(backward))
        worst = max(worst, rel)
    checks = [
        _check_entry(
            "log_flux_symmetry_max_rel",
            worst,
            c["tolerance"],
            worst <= c["tolerance"],
            c["master_seed"],
            n_configs=c["n_configs"],
        )
    ]
    return {
        "suite": "detailed-balance",
        "config": c,
        "checks": checks,
        "pass": all(ch["pass"] for ch in checks),
    }


def _occupancy_check(c: dict) -> dict:
    """Long-run state occupancy vs the closed-form stationary law, with
    batch-mean error bars (one continued trajectory)."""
    params = ModelParams(N=3, L=3, d_N=c["stationary_d_N"], k=1)
    sindex = exact.StateIndex.build(3, 3)
    mu = exact.mu_vector(params, sindex)
    powvec = np.array([(params.N + 1) ** x for x in range(params.L)], dtype=np.int64)
    codes = np.array(
        [int(np.dot(sindex.states[i], powvec)) for i in range(len(sindex))]
    )
    n_batches = c["stationary_batches"]
    t_batch = c["stationary_t"] / n_batches
    occ = np.zeros(params.L, dtype=np.int64)
    occ[0] = params.N
    rng = kernel_seed(c["master_seed"], 0, tag=3)
    fractions = np.empty((n_batches, len(sindex)))
    for b in range(n_batches):
        weights = np.zeros(int(powvec[-1]) * (params.N + 1), dtype=np.float64)
        occupation_kernel(
            occ, params.theta_N, params.d_N, rng, t_batch, weights, powvec
        )
        fractions[b] = weights[codes] / t_batch
    means = fractions.mean(axis=0)
    ses = fractions.std(axis=0, ddof=1) / math.sqrt(n_batches)
    z = np.abs(means - mu) / np.maximum(ses, 1e-15)
    return {
        "max_z": float(z.max()),
        "worst_state": int(z.argmax()),
        "t_total": c["stationary_t"],
    }


def suite_exact_small(cfg: Optional[dict] = None) -> dict:
    defaults = {
        "master_seed": DEFAULT_SEED,
        "stationary_d_N": 0.1,
        "stationary_t": 1e4,
        "stationary_batches": 20,
        "resolvent_lambda": 1.0,
        "resolvent_d_grid": [1e-2, 1e-3, 1e-4, 1e-5],
        "resolvent_mc_paths": 4000,
        "resolvent_t_max": 15.0,
        "trace_d_grid": [1e-3, 1e-5],
        "trace_rel_tol_factor": 5.0,
        "empirical_trace_jumps": 4000,
    }
    c = _merge_config(defaults, cfg)
    seed = c["master_seed"]
    checks = []

    # stationarity and reversibility at the smallest torus
    p33 = ModelParams(N=3, L=3, d_N=c["stationary_d_N"], k=1)
    resid = exact.stationarity_residual(p33)
    checks.append(
        _check_entry("stationarity_residual", resid, 1e-10, resid < 1e-10, seed, "<")
    )
    asym = exact.reversibility_asymmetry(p33)
    checks.append(
        _check_entry("reversibility_asymmetry", asym, 1e-9, asym < 1e-9, seed, "<")
    )
    occ_res = _occupancy_check(c)
    checks.append(
        _check_entry(
            "occupancy_max_z",
            occ_res["max_z"],
            3.0,
            occ_res["max_z"] <= 3.0,
            seed,
            t_total=occ_res["t_total"],
        )
    )

    # resolvent flatness trend plus its stochastic representation
    sups = []
    for dn in c["resolvent_d_grid"]:
        pp = ModelParams(N=6, L=6, d_N=dn, k=2)
        sindex = exact.StateIndex.build(6, 6)
        q = exact.build_generator(pp, sindex)
        f = exact.resolvent_solve(
            pp, c["resolvent_lambda"], "not_condensed", sindex, q
        )
        part = exact.condensed_partition(pp, sindex)
        sups.append(float(np.abs(f[part.e_idx]).max()))
    monotone = all(a > b for a, b in zip(sups, sups[1:]))
    checks.append(
        _check_entry(
            "resolvent_sup_monotone",
            sups,
            "decreasing",
            monotone,
            seed,
            comparison="trend",
        )
    )

    pp = ModelParams(N=6, L=6, d_N=1e-3, k=2)
    sindex = exact.StateIndex.build(6, 6)
    q = exact.build_generator(pp, sindex)
    f = exact.resolvent_solve(pp, c["resolvent_lambda"], "not_condensed", sindex, q)
    probe_states = [
        (6, 0, 0, 0, 0, 0),
        (3, 0, 0, 3, 0, 0),
        (3, 0, 3, 0, 0, 0),
        (2, 0, 2, 0, 2, 0),
        (1, 1, 1, 1, 1, 1),
    ]
    max_z = 0.0
    for si, state in enumerate(probe_states):
        idx = sindex.encode(state)
        vals = np.empty(c["resolvent_mc_paths"])
        for path in range(c["resolvent_mc_paths"]):
            occ = np.array(state, dtype=np.int64)
            rng = kernel_seed(seed, path, tag=40 + si)
            vals[path] = resolvent_mc_kernel(
                occ,
                pp.theta_N,
                pp.d_N,
                pp.k,
                rng,
                c["resolvent_lambda"],
                c["resolvent_t_max"],
            )
        se = vals.std(ddof=1) / math.sqrt(len(vals))
        z = abs(vals.mean() - f[idx]) / max(se, 1e-15)
        max_z = max(max_z, z)
    checks.append(
        _check_entry(
            "resolvent_mc_max_z", max_z, 3.0, max_z <= 3.0, seed,
            n_states=len(probe_states),
        )
    )

    # exact trace rates: isolated-state shifts and paired-state merges
    for dn in c["trace_d_grid"]:
        p68 = ModelParams(N=6, L=8, d_N=dn, k=2)
        sindex8 = exact.StateIndex.build(6, 8)
        q8 = exact.build_generator(p68, sindex8)
        part8 = exact.condensed_partition(p68, sindex8)
        n2 = p68.N**2
        tol = c["trace_rel_tol_factor"] * dn * p68.N * math.log(p68.N)

        xi_j = classify(p68, Configuration.from_sites(8, [(0, 3), (4, 3)]))
        rates_j = exact.exact_trace_rates(p68, xi_j, sindex8, q8, part8)
        shift_targets = [
            Configuration.from_sites(8, [(1, 3), (4, 3)]),
            Configuration.from_sites(8, [(7, 3), (4, 3)]),
            Configuration.from_sites(8, [(0, 3), (3, 3)]),
            Configuration.from_sites(8, [(0, 3), (5, 3)]),
        ]
        worst = max(
            abs(rates_j[t_] / n2 - 1.0) for t_ in shift_targets
        )
        checks.append(
            _check_entry(
                f"isolated_shift_rate_rel_err_d{dn:g}",
                worst,
                tol,
                worst <= tol,
                seed,
            )
        )

        xi_k = classify(p68, Configuration.from_sites(8, [(0, 3), (2, 3)]))
        rates_k = exact.exact_trace_rates(p68, xi_k, sindex8, q8, part8)
        merge_total = sum(
            rate
            for cfg_, rate in rates_k.items()
            if classify(p68, cfg_).ell == 1
        )
        bound = n2 * math.exp(-2 * dn * (1 + math.log(p68.N))) * (1 - tol)
        checks.append(
            _check_entry(
                f"pair_merge_rate_lower_d{dn:g}",
                merge_total,
                bound,
                merge_total >= bound,
                seed,
                comparison=">=",
            )
        )

        esc = exact.exact_escape_prob(p68, xi_k, sindex8, q8, part8)
        checks.append(
            _check_entry(
                f"pair_escape_prob_d{dn:g}",
                esc,
                1.0 / (2 * p68.k),
                esc >= 1.0 / (2 * p68.k),
                seed,
                comparison=">=",
            )
        )

    # empirical trace rates against the exact solve (compiled simulator)
    p68 = ModelParams(N=6, L=8, d_N=1e-3, k=2)
    sindex8 = exact.StateIndex.build(6, 8)
    q8 = exact.build_generator(p68, sindex8)
    part8 = exact.condensed_partition(p68, sindex8)
    xi_j = classify(p68, Configuration.from_sites(8, [(0, 3), (4, 3)]))
    rates_exact = exact.exact_trace_rates(p68, xi_j, sindex8, q8, part8)
    eta0 = Configuration.from_sites(8, [(0, 3), (4, 3)])
    n_jumps = c["empirical_trace_jumps"]
    hold_total = 0.0
    counts: dict = {}
    for r in range(n_jumps):
        run = run_trace_replica(
            p68, eta0, seed, r, t_raw_max=5.0, rec_cap=1, allow_overflow=True
        )
        if run.n_rec == 0:
            raise RuntimeError("trace jump did not occur within the raw budget")
        hold_total += float(run.rec_t_trace[0])
        view = _record_view(run, 0)
        key = (view.positions, view.masses)
        counts[key] = counts.get(key, 0) + 1
    total_rate_exact = sum(rates_exact.values())
    max_z = abs(n_jumps / hold_total - total_rate_exact) / (
        (n_jumps / hold_total) / math.sqrt(n_jumps)
    )
    top = sorted(rates_exact.items(), key=lambda kv: -kv[1])[:4]
    for cfg_, rate in top:
        view = classify(p68, cfg_)
        key = (view.positions, view.masses)
        k_obs = counts.get(key, 0)
        p_pred = rate / total_rate_exact
        se = math.sqrt(p_pred * (1 - p_pred) * n_jumps)
        z = abs(k_obs - p_pred * n_jumps) / se
        max_z = max(max_z, z)
    checks.append(
        _check_entry(
            "empirical_trace_rate_max_z",
            max_z,
            3.0,
            max_z <= 3.0,
            seed,
            n_jumps=n_jumps,
        )
    )

    # degenerate case: a single particle is always condensed, so watching
    # the process on the condensed set changes nothing
    p15 = ModelParams(N=1, L=5, d_N=0.5, k=1)
    sindex5 = exact.StateIndex.build(1, 5)
    q5 = exact.build_generator(p15, sindex5)
    xi1 = classify(p15, Configuration.from_sites(5, [(0, 1)]))
    tr1 = exact.exact_trace_rates(p15, xi1, sindex5, q5)
    idx0 = sindex5.encode((1, 0, 0, 0, 0))
    row = q5.getrow(idx0).tocoo()
    raw_row = {
        sindex5.decode(int(t)): float(v)
        for t, v in zip(row.col, row.data)
        if int(t) != idx0 and v != 0.0
    }
    same = set(raw_row) == set(tr1) and all(
        abs(tr1_v - raw_row[cfg_]) < 1e-9 * abs(raw_row[cfg_])
        for cfg_, tr1_v in tr1.items()
    )
    checks.append(
        _check_entry(
            "trace_equals_raw_when_all_condensed",
            bool(same),
            True,
            same,
            seed,
            comparison="==",
        )
    )

    return {
        "suite": "exact-small",
        "config": c,
        "checks": checks,
        "pass": all(ch["pass"] for ch in checks),
    }


def suite_cbm_selfcheck(cfg: Optional[dict] = None) -> dict:
    defaults = {
        "gap0": 0.3,
        "rho": 1.0,
        "dt": 1e-4,
        "n_paths": 10_000,
        "t_max": 2.0,
        "master_seed": DEFAULT_SEED,
    }
    c = _merge_config(defaults, cfg)
    seed = c["master_seed"]
    p_exact, mean_exact = cbm.pair_exit_law(c["gap0"], c["rho"])

    def run(dt, stream):
        rng = replica_rng(seed, stream)
        ens = cbm.sample_pair_ensemble(
            c["rho"], (0.0, c["gap0"]), dt, c["n_paths"], rng, c["t_max"]
        )
        done = ~ens.censored
        tau = ens.tau[done]
        return {
            "p_hat": float(ens.hit_zero[done].mean()),
            "p_se": math.sqrt(p_exact * (1 - p_exact) / done.sum()),
            "mean_tau": float(tau.mean()),
            "tau_se": float(tau.std(ddof=1) / math.sqrt(done.sum())),
            "censored": int(ens.censored.sum()),
        }

    full = run(c["dt"], 0)
    half = run(c["dt"] / 2, 1)
    z_dir = abs(full["p_hat"] - p_exact) / full["p_se"]
    z_tau = abs(full["mean_tau"] - mean_exact) / full["tau_se"]
    move_tau = abs(full["mean_tau"] - half["mean_tau"]) / math.sqrt(
        full["tau_se"] ** 2 + half["tau_se"] ** 2
    )
    move_dir = abs(full["p_hat"] - half["p_hat"]) / math.sqrt(
        full["p_se"] ** 2 + half["p_se"] ** 2
    )
    checks = [
        _check_entry("direction_prob_z", z_dir, 3.0, z_dir <= 3.0, seed,
                     estimate=full["p_hat"], exact=p_exact),
        _check_entry("mean_tau_z", z_tau, 3.0, z_tau <= 3.0, seed,
                     estimate=full["mean_tau"], exact=mean_exact),
        _check_entry("dt_halving_tau_moves", move_tau, 2.0, move_tau < 2.0,
                     seed, comparison="<"),
        _check_entry("dt_halving_dir_moves", move_dir, 2.0, move_dir < 2.0,
                     seed, comparison="<"),
    ]
    return {
        "suite": "cbm-selfcheck",
        "config": c,
        "full": full,
        "half_dt": half,
        "checks": checks,
        "pass": all(ch["pass"] for ch in checks),
    }


def suite_bd_oracle(cfg: Optional[dict] = None) -> dict:
    defaults = {
        "variants": ["inner", "edge"],
        "M_grid": [2, 8, 64],
        "d_grid": [1e-2, 1e-6],
        "theta": 1.0,
        "n_walks": 100_000,
        "bounds_M_max": 512,
        "master_seed": DEFAULT_SEED,
        "coupling": False,
        "coupling_N": 32,
        "coupling_d_N": 1e-7,
        "coupling_excursions": 10_000,
    }
    c = _merge_config(defaults, cfg)
    seed = c["master_seed"]
    checks = []
    cell = 0
    for variant in c["variants"]:
        for M in c["M_grid"]:
            for d in c["d_grid"]:
                spec = bdchain.BDSpec(M=M, theta=c["theta"], d=d, variant=variant)
                starts = sorted({1, M // 2})
                for i in starts:
                    cell += 1
                    mc = bdchain.simulate_batch(
                        spec, i, c["n_walks"], seed, replica_index=cell
                    )
                    p = bdchain.absorb_prob(spec, i)
                    eh = bdchain.expected_hitting(spec, i)
                    se_p = max(math.sqrt(p * (1 - p) / c["n_walks"]), 1e-12)
                    z_p = abs(mc["p_hat"] - p) / se_p
                    z_t = abs(mc["mean_t"] - eh) / max(mc["t_se"], 1e-300)
                    tag = f"{variant}_M{M}_d{d:g}_i{i}"
                    checks.append(
                        _check_entry(f"absorb_{tag}", z_p, 3.0, z_p <= 3.0,
                                     seed, exact=p, mc=mc["p_hat"])
                    )
                    checks.append(
                        _check_entry(f"hitting_{tag}", z_t, 3.0, z_t <= 3.0,
                                     seed, exact=eh, mc=mc["mean_t"])
                    )
    bounds_ok = True
    worst = None
    for variant in c["variants"]:
        for d in c["d_grid"]:
            for M in range(2, c["bounds_M_max"] + 1):
                try:
                    bdchain.bounds_check(
                        bdchain.BDSpec(M=M, theta=c["theta"], d=d, variant=variant)
                    )
                except bdchain.BoundViolation as exc:
                    bounds_ok = False
                    worst = str(exc)
                    break
    checks.append(
        _check_entry(
            "bounds_sweep",
            bounds_ok,
            True,
            bounds_ok,
            seed,
            comparison="==",
            detail=worst,
            M_max=c["bounds_M_max"],
        )
    )
    coupling_reports = []
    if c["coupling"]:
        for variant in c["variants"]:
            rep = coupling_stat(
                variant,
                c["coupling_N"],
                c["coupling_d_N"],
                c["coupling_excursions"],
                seed,
            )
            coupling_reports.append(rep)
            checks.append(
                _check_entry(
                    f"coupling_{variant}_absorb_z",
                    rep["p_z"],
                    3.0,
                    rep["p_z"] <= 3.0,
                    seed,
                )
            )
            checks.append(
                _check_entry(
                    f"coupling_{variant}_duration_z",
                    rep["t_z"],
                    3.0,
                    rep["t_z"] <= 3.0,
                    seed,
                )
            )
    out = {
        "suite": "bd-oracle",
        "config": c,
        "checks": checks,
        "pass": all(ch["pass"] for ch in checks),
    }
    if coupling_reports:
        out["coupling"] = coupling_reports
    return out


SUITES = {
    "theorem1": suite_theorem1,
    "theorem2": suite_theorem2,
    "theorem4": suite_theorem4,
    "detailed-balance": suite_detailed_balance,
    "exact-small": suite_exact_small,
    "cbm-selfcheck": suite_cbm_selfcheck,
    "bd-oracle": suite_bd_oracle,
}


def run_suite(which: str, cfg: Optional[dict] = None) -> dict:
    if which not in SUITES:
        raise ValueError(f"unknown suite {which!r}; choose from {sorted(SUITES)}")
    return SUITES[which](cfg)
