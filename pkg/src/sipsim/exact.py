"""Exhaustive analysis of small systems: full generator, stationarity,
resolvent solves, exact trace rates and escape probabilities.

Everything here enumerates the complete state space (all occupancy vectors
on L sites summing to N, a C(N+L-1, L-1) count guarded at 2e5), builds the
sparse jump-rate matrix, and answers questions by direct linear algebra.
States are indexed in colexicographic order so indices are stable across
runs and golden files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .condensate import CondensedView, classify, subclass
from .model import Configuration, ModelParams, log_weight

__all__ = [
    "STATE_GUARD",
    "TooLargeError",
    "SolveFailedError",
    "StateIndex",
    "Partition",
    "build_generator",
    "log_mu_vector",
    "mu_vector",
    "stationarity_residual",
    "reversibility_asymmetry",
    "resolvent_solve",
    "condensed_partition",
    "exact_trace_rates",
    "exact_escape_prob",
    "write_triplets",
    "read_triplets",
]

STATE_GUARD = 200_000


class TooLargeError(Exception):
    """State space exceeds the exhaustive-analysis guard."""


class SolveFailedError(Exception):
    """A sparse solve produced an unacceptable residual."""


def _compositions_colex(n: int, parts: int):
    """All weak compositions of n into `parts` parts, ascending colex
    (the last coordinate varies slowest)."""
    if parts == 1:
        yield (n,)
        return
    for last in range(n + 1):
        for rest in _compositions_colex(n - last, parts - 1):
            yield rest + (last,)


@dataclass
class StateIndex:
    """Bijection between occupancy vectors and dense indices."""

    N: int
    L: int
    states: np.ndarray  # (n_states, L) int32
    lookup: dict = field(repr=False)

    @classmethod
    def build(cls, N: int, L: int) -> "StateIndex":
        count = math.comb(N + L - 1, L - 1)
        if count > STATE_GUARD:
            raise TooLargeError(
                f"state space has {count} configurations (N={N}, L={L}), "
                f"guard is {STATE_GUARD}"
            )
        states = np.empty((count, L), dtype=np.int32)
        lookup = {}
        for i, comp in enumerate(_compositions_colex(N, L)):
            states[i] = comp
            lookup[comp] = i
        return cls(N=N, L=L, states=states, lookup=lookup)

    def __len__(self) -> int:
        return self.states.shape[0]

    def encode(self, eta: Union[Configuration, tuple, Iterable[int]]) -> int:
        key = eta.key() if isinstance(eta, Configuration) else tuple(int(v) for v in eta)
        try:
            return self.lookup[key]
        except KeyError:
            raise KeyError(f"occupancy {key} is not a state of (N={self.N}, L={self.L})")

    def decode(self, i: int) -> Configuration:
        return Configuration(np.array(self.states[i], dtype=np.int64))


def build_generator(params: ModelParams, sindex: Optional[StateIndex] = None) -> sp.csr_matrix:
    """Sparse generator: off-diagonal (s, t) is the jump rate of the single
    particle move taking s to t, diagonal the negative row sum."""
    if sindex is None:
        sindex = StateIndex.build(params.N, params.L)
    L = params.L
    theta = params.theta_N
    d = params.d_N
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    for s in range(len(sindex)):
        occ = sindex.states[s]
        key = tuple(int(v) for v in occ)
        out = 0.0
        for x in range(L):
            n_x = key[x]
            if n_x == 0:
                continue
            for step in (1, -1):
                y = (x + step) % L
                rate = theta * n_x * (d + key[y])
                moved = list(key)
                moved[x] -= 1
                moved[y] += 1
                t = sindex.lookup[tuple(moved)]
                rows.append(s)
                cols.append(t)
                vals.append(rate)
                out += rate
        rows.append(s)
        cols.append(s)
        vals.append(-out)
    n = len(sindex)
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def log_mu_vector(params: ModelParams, sindex: StateIndex) -> np.ndarray:
    """Unnormalised log stationary weights per state."""
    logw = np.array([log_weight(params, n) for n in range(params.N + 1)])
    return logw[sindex.states].sum(axis=1)


def mu_vector(params: ModelParams, sindex: StateIndex) -> np.ndarray:
    """Normalised stationary distribution over the enumerated states."""
    logmu = log_mu_vector(params, sindex)
    mu = np.exp(logmu - logmu.max())
    return mu / mu.sum()


def stationarity_residual(params: ModelParams) -> float:
    """max |mu^T Q| over states, relative to the largest probability flux."""
    sindex = StateIndex.build(params.N, params.L)
    q = build_generator(params, sindex)
    mu = mu_vector(params, sindex)
    resid = np.abs(q.T @ mu).max()
    coo = q.tocoo()
    off = coo.row != coo.col
    flux = np.abs(mu[coo.row[off]] * coo.data[off]).max()
    return float(resid / flux)


def reversibility_asymmetry(params: ModelParams) -> float:
    """max |mu_s q_st - mu_t q_ts| over pairs, relative to the largest flux."""
    sindex = StateIndex.build(params.N, params.L)
    q = build_generator(params, sindex).tocoo()
    mu = mu_vector(params, sindex)
    off = q.row != q.col
    flux = sp.coo_matrix(
        (mu[q.row[off]] * q.data[off], (q.row[off], q.col[off])), shape=q.shape
    ).tocsr()
    diff = np.abs(flux - flux.T)
    scale = np.abs(flux.data).max()
    return float(diff.max() / scale)


def _rhs_vector(
    params: ModelParams, sindex: StateIndex, rhs: Union[str, np.ndarray]
) -> np.ndarray:
    if isinstance(rhs, np.ndarray):
        if rhs.shape != (len(sindex),):
            raise ValueError(f"rhs has shape {rhs.shape}, want ({len(sindex)},)")
        return rhs.astype(np.float64)
    if rhs == "ones":
        return np.ones(len(sindex))
    if rhs == "zeros":
        return np.zeros(len(sindex))
    if rhs == "not_condensed":
        vec = np.zeros(len(sindex))
        for s in range(len(sindex)):
            if classify(params, sindex.decode(s)) is None:
                vec[s] = 1.0
        return vec
    raise ValueError(f"unknown rhs choice {rhs!r}")


def resolvent_solve(
    params: ModelParams,
    lam: float,
    rhs: Union[str, np.ndarray] = "not_condensed",
    sindex: Optional[StateIndex] = None,
    q: Optional[sp.csr_matrix] = None,
) -> np.ndarray:
    """Solve (lam - Q) F = rhs directly.

    The solution is the expected discounted occupation of the rhs set, so
    0 <= F <= max(rhs)/lam entrywise; both that envelope and the residual
    (1e-8 in the max norm) are enforced, with SolveFailedError raised on
    violation together with a crude conditioning estimate.
    """
    if not lam > 0:
        raise ValueError(f"lam must be positive, got {lam}")
    if sindex is None:
        sindex = StateIndex.build(params.N, params.L)
    if q is None:
        q = build_generator(params, sindex)
    b = _rhs_vector(params, sindex, rhs)
    n = len(sindex)
    a = (sp.identity(n, format="csr") * lam - q).tocsc()
    f = splu(a).solve(b)
    resid = np.abs(a @ f - b).max()
    hi = float(b.max()) / lam if b.size else 0.0
    if resid > 1e-8 or f.min() < -1e-10 or f.max() > hi + 1e-10:
        diag = a.diagonal()
        cond_hint = float(np.abs(diag).max() / max(np.abs(diag).min(), 1e-300))
        raise SolveFailedError(
            f"resolvent solve residual {resid:.3e} (diag ratio {cond_hint:.3e}), "
            f"range [{f.min():.3e}, {f.max():.3e}] vs [0, {hi:.3e}]"
        )
    return f


@dataclass
class Partition:
    """Index sets of the condensed states and their isolation subclasses."""

    e_idx: np.ndarray
    j_idx: np.ndarray
    k_idx: np.ndarray
    views: dict  # state index -> CondensedView


def condensed_partition(params: ModelParams, sindex: StateIndex) -> Partition:
    e, j, k, views = [], [], [], {}
    for s in range(len(sindex)):
        view = classify(params, sindex.decode(s))
        if view is None:
            continue
        e.append(s)
        views[s] = view
        if subclass(params, view) == "J":
            j.append(s)
        else:
            k.append(s)
    return Partition(
        e_idx=np.array(e, dtype=np.int64),
        j_idx=np.array(j, dtype=np.int64),
        k_idx=np.array(k, dtype=np.int64),
        views=views,
    )


def exact_trace_rates(
    params: ModelParams,
    xi: CondensedView,
    sindex: Optional[StateIndex] = None,
    q: Optional[sp.csr_matrix] = None,
    part: Optional[Partition] = None,
) -> dict:
    """Jump rates of the process watched only on the condensed set.

    R(xi, zeta') = r(xi, zeta') + sum over excursion states eta of
    r(xi, eta) * P_eta[re-enter the condensed set at zeta'], with the
    re-entry distribution obtained from one sparse factorisation of the
    generator restricted to the complement. Returns {Configuration: rate}
    over targets distinct from xi; rates below 1e-15 of the total are
    dropped.
    """
    if sindex is None:
        sindex = StateIndex.build(params.N, params.L)
    if q is None:
        q = build_generator(params, sindex)
    if part is None:
        part = condensed_partition(params, sindex)
    xi_occ = np.zeros(params.L, dtype=np.int64)
    for x, n in zip(xi.positions, xi.masses):
        xi_occ[x] = n
    xi_idx = sindex.encode(tuple(int(v) for v in xi_occ))
    if xi_idx not in part.views:
        raise ValueError("xi is not a condensed state of these parameters")

    e = part.e_idx
    mask = np.ones(len(sindex), dtype=bool)
    mask[e] = False
    b_idx = np.flatnonzero(mask)
    q_csr = q.tocsr()
    if b_idx.size:
        a_bb = q_csr[b_idx][:, b_idx].tocsc()
        q_be = q_csr[b_idx][:, e].toarray()
        h = -splu(a_bb).solve(q_be)  # (|B|, |E|) re-entry probabilities
        row_b = q_csr[xi_idx, b_idx].toarray().ravel()
        trace_row = q_csr[xi_idx, e].toarray().ravel() + row_b @ h
    else:
        trace_row = q_csr[xi_idx, e].toarray().ravel()

    # internal consistency: the full trace row (self column included)
    # behaves like a generator row over E
    if abs(trace_row.sum()) > 1e-7 * max(abs(trace_row).max(), 1.0):
        raise SolveFailedError(
            f"trace row does not balance: sum {trace_row.sum():.3e}"
        )

    total = trace_row[e != xi_idx].sum()
    out = {}
    for col, target in enumerate(e):
        if target == xi_idx:
            continue
        rate = float(trace_row[col])
        if rate > 1e-15 * max(total, 1.0):
            out[sindex.decode(int(target))] = rate
    return out


def exact_escape_prob(
    params: ModelParams,
    xi: CondensedView,
    sindex: Optional[StateIndex] = None,
    q: Optional[sp.csr_matrix] = None,
    part: Optional[Partition] = None,
) -> float:
    """Probability that, from the distance-2 state xi, the next condensed
    level reached is a merge (fewer piles) rather than a fully isolated
    arrangement with the same pile count.

    Solves the harmonic problem with value 1 on condensed states with fewer
    piles, 0 on isolated (all gaps >= 3) states with the same pile count,
    interior elsewhere.
    """
    if sindex is None:
        sindex = StateIndex.build(params.N, params.L)
    if q is None:
        q = build_generator(params, sindex)
    if part is None:
        part = condensed_partition(params, sindex)
    ell = xi.ell
    xi_occ = np.zeros(params.L, dtype=np.int64)
    for x, n in zip(xi.positions, xi.masses):
        xi_occ[x] = n
    xi_idx = sindex.encode(tuple(int(v) for v in xi_occ))
    view = part.views.get(xi_idx)
    if view is None or subclass(params, view) != "K":
        raise ValueError("xi must be a condensed state with a distance-2 pair")

    ones_set = [s for s, v in part.views.items() if v.ell < ell]
    zero_set = [int(s) for s in part.j_idx if part.views[s].ell == ell]
    boundary = set(ones_set) | set(zero_set)
    interior = np.array(
        [s for s in range(len(sindex)) if s not in boundary], dtype=np.int64
    )
    q_csr = q.tocsr()
    a_ii = q_csr[interior][:, interior].tocsc()
    rhs = -np.asarray(
        q_csr[interior][:, np.array(ones_set, dtype=np.int64)].sum(axis=1)
    ).ravel()
    u = splu(a_ii).solve(rhs)
    pos = int(np.searchsorted(interior, xi_idx))
    if interior[pos] != xi_idx:
        raise RuntimeError("starting state unexpectedly on the boundary")
    val = float(u[pos])
    if not -1e-9 <= val <= 1 + 1e-9:
        raise SolveFailedError(f"escape probability {val} outside [0, 1]")
    return min(max(val, 0.0), 1.0)


def write_triplets(path, mat: sp.spmatrix) -> None:
    """Dump a sparse matrix as text: 'rows cols nnz' header, then one
    'row col value' line per stored entry, row-major."""
    coo = mat.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        fh.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for i in order:
            fh.write(f"{coo.row[i]} {coo.col[i]} {float(coo.data[i])!r}\n")


def read_triplets(path) -> sp.coo_matrix:
    with open(path) as fh:
        header = fh.readline().split()
        n_rows, n_cols, nnz = int(header[0]), int(header[1]), int(header[2])
        rows = np.empty(nnz, dtype=np.int64)
        cols = np.empty(nnz, dtype=np.int64)
        vals = np.empty(nnz, dtype=np.float64)
        for i in range(nnz):
            parts = fh.readline().split()
            rows[i] = int(parts[0])
            cols[i] = int(parts[1])
            vals[i] = float(parts[2])
    return sp.coo_matrix((vals, (rows, cols)), shape=(n_rows, n_cols))
