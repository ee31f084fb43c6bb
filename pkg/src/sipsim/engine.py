"""Event-driven simulation of the particle system (reference path).

Exact continuous-time simulation: exponential holding times from the total
active rate, channel selection proportional to rates. This implementation
favours clarity and observability over speed; every event is delivered to
observers, which makes it the right tool for excursion-level studies, tiny
systems, and cross-checking the compiled kernels in ``_kernels``.

Per-replica randomness comes from numpy PCG64 streams keyed by
(master_seed, replica_index) through SeedSequence, so replica outputs are
reproducible and independent of execution order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .model import Configuration, ModelParams, active_rates, apply_jump

__all__ = [
    "SimEvent",
    "ReplicaPlan",
    "RunResult",
    "DeadStateError",
    "replica_rng",
    "step",
    "run",
    "run_replicas",
]


class DeadStateError(RuntimeError):
    """No active jump channel (only possible with zero particles)."""


@dataclass(frozen=True)
class SimEvent:
    """One particle move: at time t, a particle went from src to dst."""

    t: float
    src: int
    dst: int


@dataclass(frozen=True)
class ReplicaPlan:
    """Unit of ensemble work: which stream to use and how long to run."""

    master_seed: int
    replica_index: int
    t_end: float


@dataclass
class RunResult:
    final: Configuration
    t: float
    n_events: int
    aborted: bool = False
    abort_t: Optional[float] = None


# An observer is called after every applied event as observer(t, event, eta)
# where eta is the post-jump configuration. Returning a truthy value aborts
# the run; the partial result is returned with the abort marker set. The
# configuration passed in is a fresh object the observer may keep.
Observer = Callable[[float, SimEvent, Configuration], Optional[bool]]


def replica_rng(master_seed: int, replica_index: int) -> np.random.Generator:
    """Independent, reproducible stream for one replica."""
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(replica_index,))
    return np.random.Generator(np.random.PCG64(seq))


def step(
    params: ModelParams, eta: Configuration, rng: np.random.Generator
) -> tuple[float, SimEvent, Configuration]:
    """Sample one event: holding time dt, the move, and the next configuration.

    The holding time is -log(U)/R with U uniform on (0, 1] (a zero draw is
    redrawn) and R the total active rate.
    """
    channels = active_rates(params, eta)
    if not channels:
        raise DeadStateError("no active rates; the configuration has no particles")
    total = sum(c[2] for c in channels)

    u = rng.random()
    while u == 0.0:
        u = rng.random()
    dt = -math.log(u) / total

    pick = rng.random() * total
    acc = 0.0
    idx = len(channels) - 1
    for j, (_, _, r) in enumerate(channels):
        acc += r
        if pick < acc:
            idx = j
            break
    site, direction, _ = channels[idx]
    eta_next = apply_jump(eta, site, direction)
    event = SimEvent(dt, site, (site + direction) % eta.L)
    return dt, event, eta_next


def run(
    params: ModelParams,
    eta0: Configuration,
    t_end: float,
    rng: np.random.Generator,
    observers: tuple[Observer, ...] = (),
) -> RunResult:
    """Simulate from eta0 until t_end (events with t <= t_end are delivered).

    Observers see every event in order and may abort the run by returning a
    truthy value; the partial path is then returned with ``aborted`` set
    rather than raising.
    """
    if t_end < 0:
        raise ValueError(f"t_end must be >= 0, got {t_end}")
    eta = eta0
    t = 0.0
    n_events = 0
    while True:
        dt, event, eta_next = step(params, eta, rng)
        if t + dt > t_end:
            return RunResult(final=eta, t=t_end, n_events=n_events)
        t += dt
        eta = eta_next
        n_events += 1
        stamped = SimEvent(t, event.src, event.dst)
        for obs in observers:
            if obs(t, stamped, eta):
                return RunResult(
                    final=eta, t=t, n_events=n_events, aborted=True, abort_t=t
                )


@dataclass
class ReplicaError:
    """Captured failure of one replica; siblings are unaffected."""

    replica_index: int
    error: Exception


def run_replicas(
    params: ModelParams,
    eta0: Configuration,
    plans: list[ReplicaPlan],
    replica_fn: Callable[[ModelParams, Configuration, ReplicaPlan, np.random.Generator], object],
) -> dict[int, object]:
    """Run independent replicas and merge results keyed by replica index.

    Each replica gets its own stream derived from (master_seed,
    replica_index), so results do not depend on scheduling or on which other
    indices run; merging is a plain dict update. A replica that raises is
    reported as a ReplicaError value without aborting the others.
    """
    out: dict[int, object] = {}
    for plan in plans:
        rng = replica_rng(plan.master_seed, plan.replica_index)
        try:
            out[plan.replica_index] = replica_fn(params, eta0.copy(), plan, rng)
        except Exception as exc:  # noqa: BLE001 - isolation is the contract
            out[plan.replica_index] = ReplicaError(plan.replica_index, exc)
    return out
