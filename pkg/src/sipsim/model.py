"""Microscopic particle system on the discrete torus.

Particles hop between nearest-neighbour sites of Z/LZ. A particle at site x
jumps to y = x +/- 1 (mod L) at rate

    theta * eta_x * (d + eta_y),

so occupied targets attract mass (the inclusion part, strength eta_y) while
the diffusive part is proportional to d. The toolkit works in the
weak-diffusion scaling theta = N^2 / d with d small, where the mass quickly
aggregates into a handful of single-site piles; everything downstream
(condensate tracking, coupling checks, limit comparisons) builds on the
primitives here.

The product measure with single-site weights

    w_n = Gamma(d + n) / (Gamma(d) * n!)

is reversible for the dynamics, which is used both as an exact oracle and as
an invariant to test against.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ModelParams",
    "Configuration",
    "EmptySiteError",
    "jump_rate",
    "apply_jump",
    "active_rates",
    "log_weight",
    "log_mu",
]


class EmptySiteError(ValueError):
    """Raised when a jump is requested from a site with no particles."""


@dataclass(frozen=True)
class ModelParams:
    """Scaling parameters of the particle system.

    Attributes:
        N: total particle number (conserved).
        L: number of torus sites, L >= 3.
        d_N: diffusivity parameter d, > 0. Small d means strong condensation.
        k: maximum number of piles the condensate tracker follows. Site count
            should satisfy L >= 6k so that k piles can sit pairwise far apart.
    """

    N: int
    L: int
    d_N: float
    k: int = 1

    def __post_init__(self) -> None:
        if self.N < 1:
            raise ValueError(f"need at least one particle, got N={self.N}")
        if self.L < 3:
            raise ValueError(f"need at least three sites, got L={self.L}")
        if not (self.d_N > 0.0) or not math.isfinite(self.d_N):
            raise ValueError(f"diffusivity must be positive and finite, got {self.d_N}")
        if self.k < 1:
            raise ValueError(f"tracker width must be >= 1, got k={self.k}")
        if self.L < 6 * self.k:
            warnings.warn(
                f"L={self.L} is small for k={self.k} piles (want L >= {6 * self.k}); "
                "crowding effects will be strong",
                stacklevel=2,
            )
        ind = self.condensing_indicator
        if ind > 1.0:
            warnings.warn(
                f"d_N * N^3 * log N = {ind:.3g} > 1: outside the condensing regime, "
                "pile separation is not guaranteed",
                stacklevel=2,
            )

    @property
    def theta_N(self) -> float:
        """Microscopic rate scale theta = N^2 / d."""
        return self.N**2 / self.d_N

    @property
    def rho(self) -> float:
        """Particle density N / L."""
        return self.N / self.L

    @property
    def condensing_indicator(self) -> float:
        """d * N^3 * log N; below 1 the system is deep in the condensing regime."""
        return self.d_N * self.N**3 * math.log(self.N) if self.N > 1 else self.d_N


class Configuration:
    """Occupancy vector on the torus, with the particle total cached.

    Instances behave as immutable values: mutating operations return new
    objects. Equality and hashing go through the occupancy tuple so
    configurations can key dicts and sets.
    """

    __slots__ = ("occupancy", "total", "_key")

    def __init__(self, occupancy) -> None:
        occ = np.asarray(occupancy, dtype=np.int64).copy()
        if occ.ndim != 1:
            raise ValueError("occupancy must be one-dimensional")
        if (occ < 0).any():
            raise ValueError("occupancy entries must be non-negative")
        self.occupancy = occ
        self.total = int(occ.sum())
        self._key = None

    @classmethod
    def from_sites(cls, L: int, piles) -> "Configuration":
        """Build a configuration from (site, mass) pairs on an empty torus."""
        occ = np.zeros(L, dtype=np.int64)
        for site, mass in piles:
            occ[site % L] += mass
        return cls(occ)

    @property
    def L(self) -> int:
        return self.occupancy.shape[0]

    def key(self) -> tuple:
        if self._key is None:
            self._key = tuple(int(v) for v in self.occupancy)
        return self._key

    def occupied_sites(self) -> np.ndarray:
        return np.flatnonzero(self.occupancy)

    def copy(self) -> "Configuration":
        return Configuration(self.occupancy)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Configuration):
            return NotImplemented
        return self.key() == other.key()

    def __hash__(self) -> int:
        return hash(self.key())

    def __repr__(self) -> str:
        return f"Configuration({list(self.occupancy)})"


def jump_rate(params: ModelParams, eta: Configuration, x: int, direction: int) -> float:
    """Rate of moving one particle from site x to x + direction (mod L).

    Equals theta * eta_x * (d + eta_y) with y the target site. Zero when the
    source is empty.
    """
    if direction not in (1, -1):
        raise ValueError(f"direction must be +1 or -1, got {direction}")
    occ = eta.occupancy
    L = occ.shape[0]
    x = x % L
    y = (x + direction) % L
    return params.theta_N * occ[x] * (params.d_N + occ[y])


def apply_jump(eta: Configuration, x: int, direction: int) -> Configuration:
    """Move one particle from x to x + direction, returning a new configuration."""
    if direction not in (1, -1):
        raise ValueError(f"direction must be +1 or -1, got {direction}")
    occ = eta.occupancy
    L = occ.shape[0]
    x = x % L
    if occ[x] == 0:
        raise EmptySiteError(f"no particle to move at site {x}")
    y = (x + direction) % L
    new = occ.copy()
    new[x] -= 1
    new[y] += 1
    return Configuration(new)


def active_rates(params: ModelParams, eta: Configuration) -> list[tuple[int, int, float]]:
    """All jump channels with positive rate, as (site, direction, rate).

    Only occupied sites are scanned, so the list has exactly two entries per
    occupied site (d > 0 makes every move from an occupied site possible).
    """
    occ = eta.occupancy
    L = occ.shape[0]
    theta = params.theta_N
    d = params.d_N
    out: list[tuple[int, int, float]] = []
    for x in np.flatnonzero(occ):
        x = int(x)
        c = occ[x]
        out.append((x, 1, theta * c * (d + occ[(x + 1) % L])))
        out.append((x, -1, theta * c * (d + occ[(x - 1) % L])))
    return out


def log_weight(params: ModelParams, n: int) -> float:
    """log w_n for the single-site weight w_n = Gamma(d + n) / (Gamma(d) n!).

    Computed as a lgamma difference so that tiny d (where Gamma(d) ~ 1/d
    overflows any direct ratio) stays finite: log w_0 = 0 and for n >= 1 the
    value is of order log d.
    """
    if n < 0:
        raise ValueError(f"occupation must be non-negative, got {n}")
    if n == 0:
        return 0.0
    d = params.d_N
    return math.lgamma(d + n) - math.lgamma(d) - math.lgamma(n + 1)


def log_mu(params: ModelParams, eta: Configuration) -> float:
    """Log of the (unnormalised) reversible product measure at eta."""
    return float(sum(log_weight(params, int(n)) for n in eta.occupancy if n > 0))
