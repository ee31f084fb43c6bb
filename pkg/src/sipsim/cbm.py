"""Coalescing diffusions on the unit circle: the k-pile scaling limit.

Each cluster of labels performs an independent Brownian motion on the circle
R/Z with variance 2*rho^2 per unit time; when two clusters meet they stick
forever. The counter-clockwise gap

    T(x, y) = (y - x)       if x <= y
              (1 + y - x)   if y < x

between two clusters is then a Brownian motion of variance 4*rho^2 absorbed
at {0, 1}, which gives closed-form exit laws used as oracles: started from
gap g the chance of exiting at 0 is 1 - g and the mean absorption time is
g*(1 - g) / (4*rho^2).

Sampling is Euler-Maruyama on real-line lifts. Because a discrete step can
straddle a meeting without the endpoints showing it, each pair applies a
Brownian-bridge crossing correction per boundary,

    p_b = exp(-2 * dist(g0, b) * dist(g1, b) / var_step),

with the two boundary probabilities combined as min(1, p0 + p1). Merged
clusters take the midpoint of the two positions along the meeting side, and
per-label lifts keep integer offsets so unwrapped trajectories stay
continuous across merges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "CBMParams",
    "CBMState",
    "CBMPath",
    "PairEnsemble",
    "torus_gap",
    "detect_coalescence",
    "crossing_probabilities",
    "pair_exit_law",
    "initial_state",
    "step",
    "sample_path",
    "sample_pair_ensemble",
]


@dataclass(frozen=True)
class CBMParams:
    """Sampler configuration: label count k, speed parameter rho (the cluster
    variance rate is 2*rho^2), Euler step dt, and whether the bridge
    crossing correction is applied."""

    k: int
    rho: float
    dt: float = 1e-4
    bridge: bool = True

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    @property
    def sigma_step(self) -> float:
        """Per-cluster increment standard deviation over one step."""
        return math.sqrt(2.0 * self.rho**2 * self.dt)

    @property
    def pair_variance(self) -> float:
        """Variance of a pair gap over one step (relative motion)."""
        return 4.0 * self.rho**2 * self.dt


@dataclass(frozen=True)
class CBMState:
    """Positions of k labels partitioned into coalesced clusters.

    cluster_of[i] indexes cluster_lifts; a label's real-line lift is
    cluster_lifts[cluster_of[i]] + label_offsets[i] with integer offsets, so
    co-clustered labels occupy exactly the same circle point while their
    unwrapped trajectories stay individually continuous.
    """

    t: float
    cluster_of: tuple[int, ...]
    cluster_lifts: tuple[float, ...]
    label_offsets: tuple[float, ...]

    @property
    def k(self) -> int:
        return len(self.cluster_of)

    @property
    def n_clusters(self) -> int:
        return len(self.cluster_lifts)

    def positions(self) -> tuple[float, ...]:
        """Circle positions in [0, 1); co-clustered labels compare equal."""
        return tuple(
            self.cluster_lifts[c] % 1.0 for c in self.cluster_of
        )

    def lifts(self) -> tuple[float, ...]:
        """Unwrapped real-line positions per label."""
        return tuple(
            self.cluster_lifts[c] + off
            for c, off in zip(self.cluster_of, self.label_offsets)
        )


@dataclass
class CBMPath:
    u0: tuple[float, ...]
    frame_times: list[float]
    frame_positions: list[tuple[float, ...]]
    coalescence_times: list[float]
    final: CBMState


@dataclass
class PairEnsemble:
    """Vectorised k=2 ensemble output (the common verification case)."""

    tau: np.ndarray  # first-meeting time, t_max where censored
    censored: np.ndarray  # bool, never merged within t_max
    hit_zero: np.ndarray  # bool, gap exited at 0 (valid where not censored)
    probe_times: list[float]
    probe_lifts: np.ndarray  # (n_probes, n_paths, 2) unwrapped label positions
    probe_merged: np.ndarray  # (n_probes, n_paths) bool


def torus_gap(x: float, y: float) -> float:
    """Counter-clockwise distance from x to y on R/Z, in [0, 1)."""
    return (y - x) % 1.0


def crossing_probabilities(
    gap_before: float, gap_after: float, pair_variance: float
) -> tuple[float, float]:
    """Brownian-bridge probabilities that the gap touched 0 (resp. 1) during
    a step from gap_before to gap_after (unwrapped continuation, no modulo).

    Endpoints outside (0, 1) make the corresponding probability 1.
    """
    if gap_after <= 0.0:
        return 1.0, 0.0
    if gap_after >= 1.0:
        return 0.0, 1.0
    p0 = math.exp(-2.0 * gap_before * gap_after / pair_variance)
    p1 = math.exp(-2.0 * (1.0 - gap_before) * (1.0 - gap_after) / pair_variance)
    return p0, p1


def detect_coalescence(
    gap_before: float, gap_after: float, pair_variance: float, u: float
) -> bool:
    """Decide whether a pair met during one Euler step.

    gap_after is the unwrapped continuation gap_before + relative increment;
    values at or beyond a boundary are certain meetings, otherwise the bridge
    correction fires with probability min(1, p0 + p1) against the uniform
    draw u.
    """
    p0, p1 = crossing_probabilities(gap_before, gap_after, pair_variance)
    return u < min(1.0, p0 + p1)


def pair_exit_law(gap0: float, rho: float) -> tuple[float, float]:
    """Exact exit law of a pair gap started at gap0: probability of meeting
    via gap -> 0, and the mean meeting time gap0*(1-gap0)/(4 rho^2)."""
    if not 0.0 < gap0 < 1.0:
        raise ValueError(f"gap0 must lie strictly inside (0, 1), got {gap0}")
    p_hit_zero = 1.0 - gap0
    mean_tau = gap0 * (1.0 - gap0) / (4.0 * rho**2)
    return p_hit_zero, mean_tau


def initial_state(u0) -> CBMState:
    """Fresh state: every label its own cluster at the given circle points."""
    u = [float(x) % 1.0 for x in u0]
    return CBMState(
        t=0.0,
        cluster_of=tuple(range(len(u))),
        cluster_lifts=tuple(u),
        label_offsets=(0.0,) * len(u),
    )


def _merge_position(lift_a: float, lift_b: float) -> float:
    """Midpoint of two cluster positions along the shorter arc, as a lift
    near lift_a."""
    diff = (lift_b - lift_a + 0.5) % 1.0 - 0.5
    return lift_a + diff / 2.0


def step(params: CBMParams, state: CBMState, rng: np.random.Generator) -> CBMState:
    """One Euler-Maruyama step with pairwise coalescence resolution.

    Clusters get independent Gaussian increments (variance 2 rho^2 dt). Every
    cluster pair is tested for a meeting during the step: endpoint crossings
    of the gap are certain, and the bridge correction (when enabled) catches
    in-step crossings. Fired pairs are merged closest-first, repeated until
    no merge remains, so multi-way meetings within one step collapse
    consistently.
    """
    n = state.n_clusters
    lifts = np.array(state.cluster_lifts)
    pos_old = lifts % 1.0
    dw = rng.normal(0.0, params.sigma_step, size=n)
    new_lifts = lifts + dw
    pos_new = new_lifts % 1.0
    t_new = state.t + params.dt

    if n == 1:
        return CBMState(
            t=t_new,
            cluster_of=state.cluster_of,
            cluster_lifts=(float(new_lifts[0]),),
            label_offsets=state.label_offsets,
        )

    var = params.pair_variance
    fired: list[tuple[float, int, int]] = []
    for a in range(n):
        for b in range(a + 1, n):
            g0 = torus_gap(pos_old[a], pos_old[b])
            g1 = g0 + (dw[b] - dw[a])  # unwrapped continuation
            if g1 <= 0.0 or g1 >= 1.0:
                hit = True
            elif params.bridge:
                p0, p1 = crossing_probabilities(g0, g1, var)
                hit = rng.random() < min(1.0, p0 + p1)
            else:
                hit = False
            if hit:
                end_gap = torus_gap(pos_new[a], pos_new[b])
                fired.append((min(end_gap, 1.0 - end_gap), a, b))

    if not fired:
        return CBMState(
            t=t_new,
            cluster_of=state.cluster_of,
            cluster_lifts=tuple(float(v) for v in new_lifts),
            label_offsets=state.label_offsets,
        )

    # union-find over old cluster ids, merging the closest pair first
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    merged_lift = {i: float(new_lifts[i]) for i in range(n)}
    for _, a, b in sorted(fired):
        ra, rb = find(a), find(b)
        if ra == rb:
            continue
        m = _merge_position(merged_lift[ra], merged_lift[rb])
        parent[rb] = ra
        merged_lift[ra] = m

    roots = sorted({find(i) for i in range(n)})
    new_index = {r: j for j, r in enumerate(roots)}
    out_lifts = tuple(merged_lift[r] for r in roots)

    cluster_of = []
    offsets = []
    for lbl in range(state.k):
        old_c = state.cluster_of[lbl]
        root = find(old_c)
        cluster_of.append(new_index[root])
        old_lift = state.cluster_lifts[old_c] + dw[old_c] + state.label_offsets[lbl]
        offsets.append(round(old_lift - merged_lift[root]))
    return CBMState(
        t=t_new,
        cluster_of=tuple(cluster_of),
        cluster_lifts=out_lifts,
        label_offsets=tuple(float(o) for o in offsets),
    )


def sample_path(
    params: CBMParams,
    u0,
    t_end: float,
    rng: np.random.Generator,
    record_stride: int = 0,
) -> CBMPath:
    """Run one k-label path to t_end, recording coalescence times and,
    optionally, frames every record_stride steps."""
    state = initial_state(u0)
    if state.k != params.k:
        raise ValueError(f"u0 has {state.k} points but params.k={params.k}")
    n_steps = int(math.ceil(t_end / params.dt))
    path = CBMPath(
        u0=tuple(float(x) % 1.0 for x in u0),
        frame_times=[0.0],
        frame_positions=[state.positions()],
        coalescence_times=[],
        final=state,
    )
    for s in range(1, n_steps + 1):
        before = state.n_clusters
        state = step(params, state, rng)
        for _ in range(before - state.n_clusters):
            path.coalescence_times.append(state.t)
        if record_stride and (s % record_stride == 0 or s == n_steps):
            path.frame_times.append(state.t)
            path.frame_positions.append(state.positions())
    path.final = state
    if not record_stride:
        path.frame_times.append(state.t)
        path.frame_positions.append(state.positions())
    return path


def sample_pair_ensemble(
    rho: float,
    u0: tuple[float, float],
    dt: float,
    n_paths: int,
    rng: np.random.Generator,
    t_max: float,
    probe_times: Optional[list[float]] = None,
    bridge: bool = True,
) -> PairEnsemble:
    """Vectorised two-label ensemble: meeting times, meeting side, and
    unwrapped label positions at the requested probe times.

    All paths march in lockstep on a shared step grid; merged pairs keep
    evolving as a single motion so probes after a meeting still see both
    labels. Meetings are stamped at the end of the step where they fired.
    """
    probes = sorted(probe_times or [])
    g0_scalar = torus_gap(u0[0] % 1.0, u0[1] % 1.0)
    if not 0.0 < g0_scalar < 1.0:
        raise ValueError("pair must start at distinct circle points")
    sigma = math.sqrt(2.0 * rho**2 * dt)
    var = 4.0 * rho**2 * dt

    n_steps = int(math.ceil(t_max / dt))
    probe_steps = [min(n_steps, int(round(p / dt))) for p in probes]
    last_needed = max(probe_steps) if probe_steps else 0

    b1 = np.full(n_paths, float(u0[0] % 1.0))
    b2 = b1 + g0_scalar  # unwrapped: second label leads by the initial gap
    gap = np.full(n_paths, g0_scalar)
    active = np.ones(n_paths, dtype=bool)
    tau = np.full(n_paths, float(n_steps) * dt)
    censored = np.ones(n_paths, dtype=bool)
    hit_zero = np.zeros(n_paths, dtype=bool)

    n_probes = len(probes)
    probe_lifts = np.zeros((n_probes, n_paths, 2))
    probe_merged = np.zeros((n_probes, n_paths), dtype=bool)
    for pi, ps in enumerate(probe_steps):
        if ps == 0:
            probe_lifts[pi, :, 0] = b1
            probe_lifts[pi, :, 1] = b2

    for s in range(1, n_steps + 1):
        dw = rng.normal(0.0, sigma, size=(n_paths, 2))
        u = rng.random(n_paths)

        inactive = ~active
        if inactive.any():  # merged pairs move as one cluster
            b1[inactive] += dw[inactive, 0]
            b2[inactive] += dw[inactive, 0]

        if active.any():
            d1 = dw[active, 0]
            d2 = dw[active, 1]
            g_old = gap[active]
            g_new = g_old + (d2 - d1)

            with np.errstate(over="ignore"):
                p0 = np.exp(-2.0 * g_old * np.maximum(g_new, 0.0) / var)
                p1 = np.exp(
                    -2.0 * (1.0 - g_old) * np.maximum(1.0 - g_new, 0.0) / var
                )
            cross0 = g_new <= 0.0
            cross1 = g_new >= 1.0
            if bridge:
                ua = u[active]
                bridge0 = ua < p0
                bridge1 = (ua >= p0) & (ua < p0 + p1)
                m0 = cross0 | (~cross1 & bridge0)
                m1 = cross1 | (~cross0 & ~m0 & bridge1)
            else:
                m0 = cross0
                m1 = cross1 & ~cross0
            merged_now = m0 | m1

            nb1 = b1[active] + d1
            nb2 = b2[active] + d2
            if merged_now.any():
                mid0 = 0.5 * (nb1 + nb2)  # met with gap at 0: same lift point
                mid1 = 0.5 * (nb1 + nb2 - 1.0)  # met around the back: lifts differ by 1
                nb1 = np.where(m0, mid0, np.where(m1, mid1, nb1))
                nb2 = np.where(m0, mid0, np.where(m1, mid1 + 1.0, nb2))
            b1[active] = nb1
            b2[active] = nb2
            gap[active] = g_new

            if merged_now.any():
                idx = np.flatnonzero(active)[merged_now]
                tau[idx] = s * dt
                censored[idx] = False
                hit_zero[idx] = m0[merged_now]
                active[idx] = False

        for pi, ps in enumerate(probe_steps):
            if ps == s:
                probe_lifts[pi, :, 0] = b1
                probe_lifts[pi, :, 1] = b2
                probe_merged[pi] = ~active

        if not active.any() and s >= last_needed:
            break

    return PairEnsemble(
        tau=tau,
        censored=censored,
        hit_zero=hit_zero,
        probe_times=probes,
        probe_lifts=probe_lifts,
        probe_merged=probe_merged,
    )
