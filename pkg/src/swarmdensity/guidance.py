"""Per-agent Markov guidance machinery.

Builds the parametrized family of row-stochastic matrices whose stationary
distribution is the target density, scales it by a Hellinger-distance tuning
parameter, folds motion constraints onto the diagonal, and provides the
escape rules that move agents out of transient and trapped bins.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .grid import Formation, Grid, validate_density

ROW_SUM_TOL = 1e-9


def hellinger(p: np.ndarray, q: np.ndarray) -> float:
    """Hellinger distance between two probability vectors, in [0, 1]."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("length mismatch")
    return float(np.linalg.norm(np.sqrt(p) - np.sqrt(q)) / np.sqrt(2.0))


def validate_alpha(alpha: np.ndarray) -> np.ndarray:
    """Per-bin guidance weights: strictly positive, max entry exactly 1."""
    a = np.asarray(alpha, dtype=float)
    if (a <= 0).any():
        raise ValueError("alpha entries must be strictly positive")
    if abs(a.max() - 1.0) > 1e-12:
        raise ValueError("alpha must have max entry 1")
    return a


def alpha_from_distances(dist_to_ref: np.ndarray) -> np.ndarray:
    """alpha[l] = 1 - dis(l, c) / (max_q dis(q, c) + 1) for given distances."""
    d = np.asarray(dist_to_ref, dtype=float)
    return 1.0 - d / (d.max() + 1.0)


def alpha_vector(grid: Grid, c: int) -> np.ndarray:
    """Distance-based guidance weights relative to a reference bin c."""
    if not 0 <= c < grid.n_cell:
        raise IndexError("reference bin out of range")
    return alpha_from_distances(grid.distance_matrix[c])


def build_markov(pi: np.ndarray, xi: float, alpha: np.ndarray) -> np.ndarray:
    """Row-stochastic transition matrix with pi as stationary distribution.

    M = alpha * (xi / (pi @ alpha)) * (pi . alpha) + I - xi * diag(alpha),
    valid for xi * max(alpha) <= 1 and pi @ alpha != 0. xi = 0 gives the
    identity; off-diagonal mass scales linearly with xi.
    """
    pi = validate_density(pi)
    alpha = np.asarray(alpha, dtype=float)
    if not 0.0 <= xi <= 1.0:
        raise ValueError("xi must lie in [0, 1]")
    if xi * alpha.max() > 1.0 + 1e-12:
        raise ValueError("xi * max(alpha) must be <= 1")
    pa = float(pi @ alpha)
    if pa <= 0.0:
        raise ValueError("pi @ alpha must be nonzero")
    M = np.outer(alpha * (xi / pa), pi * alpha)
    M[np.diag_indices_from(M)] += 1.0 - xi * alpha
    return M


def markov_row(pi: np.ndarray, xi: float, alpha: np.ndarray, i: int) -> np.ndarray:
    """Row i of build_markov(pi, xi, alpha) without forming the full matrix."""
    pa = float(pi @ alpha)
    row = (xi / pa) * alpha[i] * (pi * alpha)
    row[i] += 1.0 - xi * alpha[i]
    return row


def apply_constraints(M: np.ndarray, constraint) -> np.ndarray:
    """Fold blocked transition mass onto the diagonal, then zero it out.

    Stationarity survives because M is reversible with respect to pi.
    """
    A = np.asarray(getattr(constraint, "A", constraint), dtype=bool)
    Mt = M.copy()
    blocked = np.where(A, 0.0, M)
    Mt[np.diag_indices_from(Mt)] += blocked.sum(axis=1)
    Mt[~A] = 0.0
    return Mt


def trapping_set(constraint, formation: Formation) -> set[int]:
    """Bins whose one-step reachable set contains no recurrent bin."""
    A = np.asarray(getattr(constraint, "A", constraint), dtype=bool)
    rec_mask = np.zeros(formation.n_cell, dtype=bool)
    rec_mask[formation.recurrent] = True
    reaches_pi = (A & rec_mask[None, :]).any(axis=1)
    return set(np.flatnonzero(~reaches_pi).tolist())


def escape_targets(constraint, formation: Formation, trapped: set[int],
                   grid: Grid | None = None) -> dict[int, int]:
    """For each trapped bin, the neighbor that most reduces hop distance
    (under the constraint graph) to the nearest non-trapped bin.

    Ties break to the lowest bin index, so the induced hop chain is
    deterministic and strictly decreasing, hence acyclic.
    """
    if not trapped:
        return {}
    A = np.asarray(getattr(constraint, "A", constraint), dtype=bool)
    n = A.shape[0]
    # Multi-source BFS from every non-trapped bin over the constraint graph.
    dist = np.full(n, -1, dtype=np.int64)
    queue = deque()
    for b in range(n):
        if b not in trapped:
            dist[b] = 0
            queue.append(b)
    while queue:
        u = queue.popleft()
        for v in np.flatnonzero(A[u]):
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(int(v))
    psi: dict[int, int] = {}
    for b in sorted(trapped):
        if dist[b] < 0:
            raise RuntimeError(f"no escape path from trapped bin {b}; constraint graph disconnected")
        neighbors = np.flatnonzero(A[b])
        best = neighbors[np.argmin(dist[neighbors])]
        if dist[best] >= dist[b]:
            raise RuntimeError(f"no admissible escape target for bin {b}")
        psi[b] = int(best)
    return psi


def escape_matrix(constraint, formation: Formation, trapped: set[int],
                  psi: dict[int, int]) -> np.ndarray:
    """Row-stochastic escape matrix for transient bins.

    Trapped rows put all mass on their escape target; other transient rows
    spread uniformly over reachable recurrent bins. Recurrent rows are never
    sampled and are stored as identity rows.
    """
    A = np.asarray(getattr(constraint, "A", constraint), dtype=bool)
    n = formation.n_cell
    rec_mask = np.zeros(n, dtype=bool)
    rec_mask[formation.recurrent] = True
    C = np.zeros((n, n))
    for i in range(n):
        if rec_mask[i]:
            C[i, i] = 1.0
        elif i in trapped:
            C[i, psi[i]] = 1.0
        else:
            targets = np.flatnonzero(A[i] & rec_mask)
            C[i, targets] = 1.0 / targets.size
    return C


@dataclass(frozen=True)
class ConstraintMatrix:
    """Per-step reachability between bins plus derived escape structure."""

    A: np.ndarray
    trapping: frozenset[int] = field(init=False)
    escape: dict[int, int] = field(init=False)

    def __init__(self, A: np.ndarray, formation: Formation):
        A = np.asarray(A, dtype=bool)
        if A.shape[0] != A.shape[1]:
            raise ValueError("constraint matrix must be square")
        if not (A == A.T).all():
            raise ValueError("constraint matrix must be symmetric")
        if not A.diagonal().all():
            raise ValueError("constraint matrix must allow staying put")
        if not _strongly_connected(A):
            raise ValueError("constraint graph must be connected")
        object.__setattr__(self, "A", A)
        trapped = trapping_set(A, formation)
        object.__setattr__(self, "trapping", frozenset(trapped))
        object.__setattr__(self, "escape", escape_targets(A, formation, trapped))


def _strongly_connected(A: np.ndarray) -> bool:
    n = A.shape[0]
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    stack = [0]
    while stack:
        u = stack.pop()
        for v in np.flatnonzero(A[u] & ~seen):
            seen[v] = True
            stack.append(int(v))
    return bool(seen.all())


def reachability_constraint(grid: Grid, max_hop: int | None) -> np.ndarray:
    """0/1 reachability: bins within l1 distance max_hop (None = all bins)."""
    if max_hop is None:
        return np.ones((grid.n_cell, grid.n_cell), dtype=bool)
    if max_hop < 0:
        raise ValueError("max_hop must be nonnegative")
    return grid.distance_matrix <= max_hop


def select_transition(row: np.ndarray, z: float) -> int:
    """Inverse-CDF selection: the bin q with cdf[q-1] <= z < cdf[q]."""
    row = np.asarray(row, dtype=float)
    if abs(row.sum() - 1.0) > ROW_SUM_TOL:
        raise ValueError(f"row sums to {row.sum()!r}, not 1")
    cdf = np.cumsum(row)
    q = int(np.searchsorted(cdf, z, side="right"))
    if q >= row.size:  # z beyond the last cdf value by float roundoff
        q = int(np.flatnonzero(row > 0)[-1])
    return q


@dataclass(frozen=True)
class ErgodicityFloor:
    """Uniform lower bound on positive transition probabilities.

    gamma bounds every positive entry of any matrix built with a tuning
    parameter at or above the quantization floor xi_min, which is what makes
    forward products of the time-varying matrices strongly ergodic.
    """

    xi_min: float
    alpha_min: float
    pi_min: float

    @property
    def gamma(self) -> float:
        return self.xi_min * self.alpha_min**2 * self.pi_min


def ergodicity_floor(m: int, grid: Grid, formation: Formation) -> ErgodicityFloor:
    if m < 2:
        raise ValueError("floor needs at least 2 agents")
    max_dis = float(grid.distance_matrix.max())
    return ErgodicityFloor(
        xi_min=1.0 / (2.0**1.5 * m),
        alpha_min=1.0 - max_dis / (max_dis + 1.0),
        pi_min=float(formation.pi[formation.recurrent].min()),
    )


def xi_quantization_floor(m: int) -> float:
    """Smallest positive Hellinger distance a swarm of m agents can realize."""
    return 1.0 / (2.0**1.5 * m)


def chain_product(matrices) -> np.ndarray:
    """Forward product of row-stochastic matrices (diagnostic use)."""
    matrices = list(matrices)
    if not matrices:
        raise ValueError("need at least one matrix")
    out = np.asarray(matrices[0], dtype=float).copy()
    for M in matrices[1:]:
        out = out @ M
    return out


def max_row_l1_to(product: np.ndarray, pi: np.ndarray) -> float:
    """Worst-row l1 distance of a chain product to the target density."""
    return float(np.abs(product - np.asarray(pi)[None, :]).sum(axis=1).max())
