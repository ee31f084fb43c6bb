"""Condensed states, typical jumps, and the labeled pile process.

A configuration is *condensed* when all mass sits in at most k single-site
piles that are pairwise at circular distance >= 2. While condensed, the
system is described by the pile positions and masses; excursions away from
the condensed set are short in the weak-diffusion regime, and watching the
process only while condensed (the trace process, clocked by time spent
condensed) yields an effective pile dynamics:

  * an isolated pile hops one site left or right (a shift, keeping its mass);
  * two piles at distance exactly 2 interact across the site between them,
    either merging onto one of the three sites or exchanging mass while
    keeping both positions.

Labels ride on the piles: each of the k labels has a position and the mass
of the pile it sits on, co-located labels share one pile. Merges land all
participating labels on the common site; exchanges leave positions alone.
Any observed trace jump that fits no rule above is *atypical*; the first such
jump is the tau-statistic the verification layer estimates.

Tubes formalise where excursions are allowed to wander: a two-site slab
(pile mass spread over the pile site and one neighbour) per pile and
direction, or a three-site slab for an interacting pair. Leaving the tube
before returning to a condensed state is a tube-exit event.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .model import Configuration, ModelParams

__all__ = [
    "CondensedView",
    "LabeledState",
    "LabelJump",
    "AtypicalJump",
    "TraceEntry",
    "TraceEvent",
    "TraceClock",
    "classify",
    "subclass",
    "neighbors",
    "tube_membership",
    "project",
    "label_update",
    "is_weakly_cyclic",
    "TraceAccumulator",
    "LabeledTraceTracker",
    "TubeMonitor",
]


@dataclass(frozen=True)
class CondensedView:
    """Unlabeled condensed state: pile sites (sorted ascending) and masses."""

    ell: int
    positions: tuple[int, ...]
    masses: tuple[int, ...]

    def as_dict(self) -> dict[int, int]:
        return dict(zip(self.positions, self.masses))


@dataclass(frozen=True)
class LabeledState:
    """k labels, each with a position and the mass of its pile.

    Co-located labels carry equal masses (one pile, shared by the labels);
    summing masses over distinct positions recovers the particle total.
    """

    positions: tuple[int, ...]
    masses: tuple[int, ...]

    @property
    def k(self) -> int:
        return len(self.positions)

    def validate(self, params: ModelParams) -> None:
        if len(self.positions) != params.k or len(self.masses) != params.k:
            raise ValueError(
                f"need {params.k} labels, got {len(self.positions)} positions "
                f"and {len(self.masses)} masses"
            )
        piles: dict[int, int] = {}
        for x, n in zip(self.positions, self.masses):
            if not 0 <= x < params.L:
                raise ValueError(f"position {x} outside the torus")
            if n < 1:
                raise ValueError(f"label mass must be >= 1, got {n}")
            if piles.setdefault(x, n) != n:
                raise ValueError(f"co-located labels at {x} carry unequal masses")
        if sum(piles.values()) != params.N:
            raise ValueError(
                f"pile masses sum to {sum(piles.values())}, expected N={params.N}"
            )
        view = classify(params, project(params, self))
        if view is None:
            raise ValueError("labeled positions are not pairwise isolated")
        if not is_weakly_cyclic(self.positions, params.L):
            raise ValueError("label positions are not weakly cyclically ordered")

    @classmethod
    def from_view(cls, view: CondensedView, k: int) -> "LabeledState":
        if view.ell != k:
            raise ValueError(
                f"need one label per pile to label a view directly "
                f"(ell={view.ell}, k={k})"
            )
        return cls(positions=view.positions, masses=view.masses)


class AtypicalJump:
    """Sentinel result: the observed trace jump fits no typical-jump rule."""

    _instance: Optional["AtypicalJump"] = None

    def __new__(cls) -> "AtypicalJump":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "ATYPICAL"


ATYPICAL = AtypicalJump()


@dataclass(frozen=True)
class LabelJump:
    """Accepted label transition: the new state, its kind, and the signed
    per-label site displacement (used to unwrap trajectories on the torus)."""

    state: LabeledState
    kind: str  # "shift" | "merge" | "exchange"
    label_moves: tuple[int, ...]


@dataclass(frozen=True)
class TraceEntry:
    """One visit to the condensed set as seen by the trace accumulator."""

    t_trace: float
    view: CondensedView
    changed: bool


@dataclass(frozen=True)
class TraceEvent:
    t_trace: float
    before: LabeledState
    after: Optional[LabeledState]
    kind: str  # "shift" | "merge" | "exchange" | "atypical"


@dataclass
class TraceClock:
    t_total: float = 0.0
    t_in_E: float = 0.0


def _circular_gaps(positions: tuple[int, ...], L: int) -> list[int]:
    """Gaps between consecutive sorted positions, wrap gap last."""
    ell = len(positions)
    gaps = [positions[j + 1] - positions[j] for j in range(ell - 1)]
    gaps.append(L - (positions[-1] - positions[0]))
    return gaps


def classify(params: ModelParams, eta: Configuration) -> Optional[CondensedView]:
    """Return the condensed view of eta, or None when eta is not condensed.

    Condensed means at most k occupied sites, pairwise circular distance >= 2.
    """
    occ = eta.occupancy
    sites = np.flatnonzero(occ)
    ell = sites.shape[0]
    if ell == 0 or ell > params.k:
        return None
    positions = tuple(int(s) for s in sites)  # flatnonzero is ascending
    if ell > 1:
        for gap in _circular_gaps(positions, eta.L):
            if gap < 2:
                return None
    masses = tuple(int(occ[s]) for s in positions)
    return CondensedView(ell=ell, positions=positions, masses=masses)


def subclass(params: ModelParams, view: CondensedView) -> str:
    """"J" when all pile distances are >= 3, "K" when some pair sits at
    distance exactly 2 (the interacting case)."""
    if view.ell == 1:
        return "J"
    if any(g == 2 for g in _circular_gaps(view.positions, params.L)):
        return "K"
    return "J"


def project(params: ModelParams, labeled: LabeledState) -> Configuration:
    """Forget the labels: occupancy with each distinct pile counted once."""
    occ = np.zeros(params.L, dtype=np.int64)
    for x, n in zip(labeled.positions, labeled.masses):
        occ[x % params.L] = n
    return Configuration(occ)


def _view_config(view: CondensedView, L: int) -> Configuration:
    occ = np.zeros(L, dtype=np.int64)
    for x, n in zip(view.positions, view.masses):
        occ[x] = n
    return Configuration(occ)


def neighbors(params: ModelParams, view: CondensedView) -> list[Configuration]:
    """All configurations reachable from ``view`` by one typical trace jump.

    Per pile: a one-site shift in each direction whose gap is not exactly 2.
    Per distance-2 adjacency, handled independently: the three merge targets
    (everything on either pile site or on the site between) and every strict
    mass exchange across the gap. The origin itself is never included.
    """
    L = params.L
    ell = view.ell
    base = _view_config(view, L)
    origin_key = base.key()
    out: dict[tuple, Configuration] = {}

    def _add(cfg: Configuration) -> None:
        if cfg.key() != origin_key:
            out.setdefault(cfg.key(), cfg)

    def _shift(i: int, direction: int) -> Configuration:
        occ = base.occupancy.copy()
        x = view.positions[i]
        occ[x] = 0
        occ[(x + direction) % L] = view.masses[i]
        return Configuration(occ)

    if ell == 1:
        _add(_shift(0, +1))
        _add(_shift(0, -1))
    else:
        gaps = _circular_gaps(view.positions, L)  # gaps[i] = gap to the right of pile i
        for i in range(ell):
            gap_right = gaps[i]
            gap_left = gaps[(i - 1) % ell]
            if gap_right != 2:
                _add(_shift(i, +1))
            if gap_left != 2:
                _add(_shift(i, -1))
            if gap_right == 2:
                j = (i + 1) % ell
                x = view.positions[i]
                M = view.masses[i] + view.masses[j]
                pair_base = base.occupancy.copy()
                pair_base[x] = 0
                pair_base[(x + 2) % L] = 0
                for y_off in (0, 1, 2):  # merge onto either pile site or the middle
                    occ = pair_base.copy()
                    occ[(x + y_off) % L] = M
                    _add(Configuration(occ))
                for m in range(1, M):  # strict exchanges keep both sites occupied
                    occ = pair_base.copy()
                    occ[x] = m
                    occ[(x + 2) % L] = M - m
                    _add(Configuration(occ))

    cfgs = [out[key] for key in sorted(out)]
    for cfg in cfgs:  # all targets are condensed states by construction
        assert classify(params, cfg) is not None
    return cfgs


def tube_membership(
    params: ModelParams, origin: CondensedView, eta: Configuration
) -> bool:
    """Is eta inside the excursion tube of the condensed state ``origin``?

    The tube is the union of slabs: for each pile i and direction with gap
    not equal to 2, configurations where pile i's mass is spread over its
    site and that neighbour (all other piles untouched); for each distance-2
    adjacency, configurations where the pair's combined mass is spread over
    the two pile sites and the one between. The origin itself belongs to its
    tube.
    """
    occ = eta.occupancy
    if eta.L != params.L or eta.total != sum(origin.masses):
        return False
    ell = origin.ell
    pos = origin.positions
    mass = origin.masses
    gaps = _circular_gaps(pos, params.L) if ell > 1 else [params.L]
    L = params.L

    def _others_match(skip: tuple[int, ...]) -> bool:
        return all(occ[pos[j]] == mass[j] for j in range(ell) if j not in skip)

    for i in range(ell):
        gap_right = gaps[i] if ell > 1 else L
        gap_left = gaps[(i - 1) % ell] if ell > 1 else L
        x = pos[i]
        if gap_right != 2:
            if (
                occ[x] + occ[(x + 1) % L] == mass[i]
                and _others_match((i,))
            ):
                return True
        if gap_left != 2:
            if (
                occ[x] + occ[(x - 1) % L] == mass[i]
                and _others_match((i,))
            ):
                return True
        if ell > 1 and gap_right == 2:
            j = (i + 1) % ell
            if (
                occ[x] + occ[(x + 1) % L] + occ[(x + 2) % L] == mass[i] + mass[j]
                and _others_match((i, j))
            ):
                return True
    return False


def is_weakly_cyclic(positions: tuple[int, ...], L: int) -> bool:
    """True when some rotation of the label tuple has non-decreasing
    representatives (positions respect the cyclic label order)."""
    k = len(positions)
    if k <= 1:
        return True
    for r in range(k):
        anchor = positions[r]
        prev = 0
        ok = True
        for j in range(1, k):
            diff = (positions[(r + j) % k] - anchor) % L
            if diff < prev:
                ok = False
                break
            prev = diff
        if ok:
            return True
    return False


def _signed_move(src: int, dst: int, L: int) -> int:
    """Signed displacement of a one-jump pile move (|move| <= 2 < L/2)."""
    return (dst - src + L // 2) % L - L // 2


def _blocks(labeled: LabeledState) -> list[tuple[int, int, tuple[int, ...]]]:
    """Distinct piles of a labeled state as (position, mass, label indices),
    sorted by position."""
    by_pos: dict[int, tuple[int, list[int]]] = {}
    for idx, (x, n) in enumerate(zip(labeled.positions, labeled.masses)):
        if x in by_pos:
            by_pos[x][1].append(idx)
        else:
            by_pos[x] = (n, [idx])
    return [
        (x, n_members[0], tuple(n_members[1]))
        for x, n_members in sorted(by_pos.items())
    ]


def label_update(
    params: ModelParams, prev: LabeledState, view: CondensedView
) -> Union[LabelJump, AtypicalJump]:
    """Advance the labels through one observed trace jump.

    Matches ``view`` against the typical moves from ``prev``:

      * shift: one whole pile (all its labels) moved one site;
      * merge: a distance-2 pair collapsed onto one of its three sites; all
        labels of both piles land there with the combined mass (this covers
        boundary exchanges where one site ends up holding everything);
      * exchange: a distance-2 pair redistributed mass; both sites stay
        occupied and no label moves.

    Returns ATYPICAL when the view fits none of these.
    """
    L = params.L
    blocks = _blocks(prev)
    prev_dict = {x: n for x, n, _ in blocks}
    next_dict = view.as_dict()
    ell = len(blocks)

    if next_dict == prev_dict:
        raise ValueError("label_update called with an unchanged condensed state")

    # shift: same pile count, one position moved by one site
    if view.ell == ell:
        for bi, (x, n, members) in enumerate(blocks):
            for direction in (1, -1):
                y = (x + direction) % L
                cand = dict(prev_dict)
                del cand[x]
                cand[y] = n
                if cand == next_dict and len(cand) == ell:
                    positions = list(prev.positions)
                    moves = [0] * prev.k
                    for m in members:
                        positions[m] = y
                        moves[m] = direction
                    state = LabeledState(tuple(positions), prev.masses)
                    return LabelJump(state, "shift", tuple(moves))

    # distance-2 adjacencies of the previous state
    for bi, (x, n, members_i) in enumerate(blocks):
        bj = (bi + 1) % ell
        xj, nj, members_j = blocks[bj]
        if ell < 2 or (xj - x) % L != 2:
            continue
        M = n + nj
        mid = (x + 1) % L
        rest = {p: q for p, q in prev_dict.items() if p not in (x, xj)}

        # merge onto one of the three sites of the pair
        if view.ell == ell - 1:
            for y in (x, mid, xj):
                cand = dict(rest)
                cand[y] = M
                if cand == next_dict:
                    positions = list(prev.positions)
                    masses = list(prev.masses)
                    moves = [0] * prev.k
                    for m in members_i:
                        moves[m] = _signed_move(x, y, L)
                        positions[m] = y
                        masses[m] = M
                    for m in members_j:
                        moves[m] = _signed_move(xj, y, L)
                        positions[m] = y
                        masses[m] = M
                    state = LabeledState(tuple(positions), tuple(masses))
                    return LabelJump(state, "merge", tuple(moves))

        # strict exchange: same sites, new split
        if view.ell == ell and set(next_dict) == set(prev_dict):
            m_new = next_dict.get(x)
            if (
                m_new is not None
                and m_new != n
                and 1 <= m_new <= M - 1
                and next_dict.get(xj) == M - m_new
                and all(next_dict.get(p) == q for p, q in rest.items())
            ):
                masses = list(prev.masses)
                for m in members_i:
                    masses[m] = m_new
                for m in members_j:
                    masses[m] = M - m_new
                state = LabeledState(prev.positions, tuple(masses))
                return LabelJump(state, "exchange", (0,) * prev.k)

    return ATYPICAL


class TraceAccumulator:
    """Engine observer: splits the clock into condensed / excursion time and
    emits a TraceEntry at every arrival in the condensed set.

    Entries carry the trace-clock timestamp; ``changed`` marks arrivals in a
    state different from the previous condensed state (exactly the trace
    jumps). Call ``finish(t_end)`` to account the tail interval after the
    last event.
    """

    def __init__(self, params: ModelParams, eta0: Configuration) -> None:
        self.params = params
        self.clock = TraceClock()
        self.entries: list[TraceEntry] = []
        self._t_prev = 0.0
        view0 = classify(params, eta0)
        self._in_E = view0 is not None
        self._prev_view = view0

    def __call__(self, t: float, event, eta: Configuration) -> None:
        dt = t - self._t_prev
        self.clock.t_total += dt
        if self._in_E:
            self.clock.t_in_E += dt
        self._t_prev = t

        view = classify(self.params, eta)
        if view is not None:
            entered = not self._in_E
            changed = view != self._prev_view
            if entered or changed:
                self.entries.append(
                    TraceEntry(self.clock.t_in_E, view, changed)
                )
            self._prev_view = view
            self._in_E = True
        else:
            self._in_E = False
        return None

    def finish(self, t_end: float) -> TraceClock:
        dt = t_end - self._t_prev
        if dt > 0:
            self.clock.t_total += dt
            if self._in_E:
                self.clock.t_in_E += dt
            self._t_prev = t_end
        return self.clock


class LabeledTraceTracker:
    """Consumes changed condensed entries and maintains the labeled state.

    Tracks cumulative signed site displacement per label (for unwrapped
    trajectories) and the first atypical jump, if any.
    """

    def __init__(self, params: ModelParams, start: LabeledState) -> None:
        start.validate(params)
        self.params = params
        self.state = start
        self.displacements = [0] * start.k
        self.events: list[TraceEvent] = []
        self.atypical_t: Optional[float] = None
        self.merge_times: list[float] = []

    @property
    def atypical(self) -> bool:
        return self.atypical_t is not None

    def update(self, t_trace: float, view: CondensedView) -> bool:
        """Feed one changed condensed state; returns False once atypical."""
        if self.atypical:
            return False
        result = label_update(self.params, self.state, view)
        if isinstance(result, AtypicalJump):
            self.atypical_t = t_trace
            self.events.append(TraceEvent(t_trace, self.state, None, "atypical"))
            return False
        self.events.append(TraceEvent(t_trace, self.state, result.state, result.kind))
        if result.kind == "merge":
            self.merge_times.append(t_trace)
        for i, mv in enumerate(result.label_moves):
            self.displacements[i] += mv
        self.state = result.state
        return True

    def unwrapped(self, start: LabeledState) -> list[float]:
        """Unwrapped positions (in circle units) given the starting labels."""
        return [
            (x + dx) / self.params.L
            for x, dx in zip(start.positions, self.displacements)
        ]


class TubeMonitor:
    """Engine observer flagging the first excursion step outside the tube of
    the most recent condensed state. Optionally aborts the run there."""

    def __init__(
        self, params: ModelParams, eta0: Configuration, abort_on_exit: bool = False
    ) -> None:
        self.params = params
        self.origin = classify(params, eta0)
        self.exit_t: Optional[float] = None
        self.exit_config: Optional[Configuration] = None
        self.abort_on_exit = abort_on_exit

    @property
    def exited(self) -> bool:
        return self.exit_t is not None

    def __call__(self, t: float, event, eta: Configuration) -> bool:
        view = classify(self.params, eta)
        if view is not None:
            self.origin = view
            return False
        if (
            self.origin is not None
            and self.exit_t is None
            and not tube_membership(self.params, self.origin, eta)
        ):
            self.exit_t = t
            self.exit_config = eta.copy()
            return self.abort_on_exit
        return False
