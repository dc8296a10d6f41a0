"""Agreement on the current swarm distribution via the Linear Opinion Pool.

Agents within communication range average their density estimates with
Metropolis weights each loop; on a connected balanced graph the estimates
contract toward the ensemble mean at the second singular value of the
weight matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil, log, sqrt

import numpy as np

from .grid import Grid


class GraphDisconnectedError(RuntimeError):
    """Raised when the proximity graph splits; carries the component partition."""

    def __init__(self, components: list[list[int]]):
        self.components = components
        super().__init__(
            f"communication graph has {len(components)} components: "
            + "; ".join(str(c) for c in components)
        )


@dataclass(frozen=True)
class CommGraph:
    """Symmetric agent adjacency (no self-edges stored)."""

    m: int
    adjacency: np.ndarray


def _components(adjacency: np.ndarray) -> list[list[int]]:
    n = adjacency.shape[0]
    seen = np.zeros(n, dtype=bool)
    comps = []
    for s in range(n):
        if seen[s]:
            continue
        stack, comp = [s], [s]
        seen[s] = True
        while stack:
            u = stack.pop()
            for v in np.flatnonzero(adjacency[u] & ~seen):
                seen[v] = True
                comp.append(int(v))
                stack.append(int(v))
        comps.append(sorted(comp))
    return comps


def build_comm_graph(agent_bins: np.ndarray, grid: Grid, radius: float) -> CommGraph:
    """Agents are adjacent when their bins are within l1 distance radius."""
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    bins = np.asarray(agent_bins, dtype=np.int64)
    m = bins.size
    dist = grid.distance_matrix[np.ix_(bins, bins)]
    adjacency = dist <= radius
    np.fill_diagonal(adjacency, False)
    comps = _components(adjacency)
    if len(comps) > 1:
        raise GraphDisconnectedError(comps)
    return CommGraph(m=m, adjacency=adjacency)


def metropolis_weights(graph: CommGraph) -> np.ndarray:
    """Doubly stochastic weight matrix conforming to the graph.

    Edge (l, j) gets 1 / (1 + max(deg l, deg j)); diagonals absorb the rest.
    """
    adj = graph.adjacency
    deg = adj.sum(axis=1)
    P = np.where(adj, 1.0 / (1.0 + np.maximum(deg[:, None], deg[None, :])), 0.0)
    np.fill_diagonal(P, 1.0 - P.sum(axis=1))
    return P


def second_singular_value(P: np.ndarray) -> float:
    """Largest singular value of P on the subspace orthogonal to ones."""
    P = np.asarray(P, dtype=float)
    m = P.shape[0]
    if m == 1:
        return 0.0
    deflated = P - np.full((m, m), 1.0 / m)
    return float(np.linalg.svd(deflated, compute_uv=False)[0])


def required_loops(sigma: float, m: int, eps_cons: float) -> int:
    """Loop count guaranteeing the disagreement norm falls below eps_cons."""
    if eps_cons <= 0:
        raise ValueError("eps_cons must be positive")
    if sigma >= 1.0:
        raise ValueError("sigma >= 1: consensus cannot be guaranteed")
    bound = eps_cons / (2.0 * sqrt(m))
    if sigma <= 0.0 or bound >= 1.0:
        return 1
    return max(1, ceil(log(bound) / log(sigma)))


def linop_round(estimates: np.ndarray, P: np.ndarray) -> np.ndarray:
    """One averaging round: agent j's new estimate is sum_l P[l, j] * est_l."""
    estimates = np.asarray(estimates, dtype=float)
    if estimates.shape[0] != P.shape[0]:
        raise ValueError("estimate count does not match weight matrix")
    return P.T @ estimates


def disagreement(estimates: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-agent l1 distance to the true distribution and its l2 aggregate."""
    estimates = np.asarray(estimates, dtype=float)
    truth = np.asarray(truth, dtype=float)
    theta = np.abs(estimates - truth[None, :]).sum(axis=1)
    return theta, float(np.linalg.norm(theta))


class BinGroupedConsensus:
    """Exact consensus on the quotient graph of occupied bins.

    Agents sharing a bin have identical positions, hence identical
    neighborhoods, Metropolis weights, and initial (indicator) estimates, so
    their estimates stay identical through every loop. Collapsing each
    occupied bin to one node makes the per-step cost depend on occupied bins
    rather than agents; results match the full per-agent iteration exactly.
    """

    def __init__(self, occupied_bins: np.ndarray, counts: np.ndarray,
                 bin_dist: np.ndarray, radius: float | None):
        self.occupied_bins = np.asarray(occupied_bins, dtype=np.int64)
        self.counts = np.asarray(counts, dtype=np.int64)
        self.m = int(self.counts.sum())
        b = self.occupied_bins.size
        if radius is None:
            adj = np.ones((b, b), dtype=bool)
        else:
            d = bin_dist[np.ix_(self.occupied_bins, self.occupied_bins)]
            adj = d <= radius
        self._bin_adj = adj  # includes the diagonal: same-bin agents are adjacent
        comps = _components(adj & ~np.eye(b, dtype=bool)) if b > 1 else [[0]]
        self.components = comps
        self.connected = len(comps) == 1
        # Per-group agent degree and pairwise Metropolis weights.
        deg = (adj * self.counts[None, :]).sum(axis=1) - 1
        self._deg = deg
        self._w = np.where(adj, 1.0 / (1.0 + np.maximum(deg[:, None], deg[None, :])), 0.0)
        # Diagonal weight of the full P for an agent in group g.
        off = (self._w * self.counts[None, :]).sum(axis=1) - self._w.diagonal()
        self._p_diag = 1.0 - off

    def make_complete(self) -> "BinGroupedConsensus":
        """Fallback for disconnected graphs: complete graph, uniform weights."""
        b = self.occupied_bins.size
        out = BinGroupedConsensus.__new__(BinGroupedConsensus)
        out.occupied_bins = self.occupied_bins
        out.counts = self.counts
        out.m = self.m
        out._bin_adj = np.ones((b, b), dtype=bool)
        out.components = [list(range(b))]
        out.connected = True
        out._deg = np.full(b, self.m - 1)
        out._w = np.full((b, b), 1.0 / self.m)
        out._p_diag = np.full(b, 1.0 / self.m)
        return out

    def weight_matrix(self) -> np.ndarray:
        """Row-stochastic quotient of the full Metropolis weight matrix."""
        Q = self._w * self.counts[None, :]
        d = Q.diagonal() - self._w.diagonal() + self._p_diag
        Q[np.diag_indices_from(Q)] = d
        return Q

    def sigma(self) -> float:
        """Exact second singular value of the full m x m weight matrix.

        The full matrix block-decomposes into the symmetrized quotient (for
        modes constant within each bin) plus within-bin antisymmetric modes
        with eigenvalue p_diag - w_gg.
        """
        if self.m == 1:
            return 0.0
        c = self.counts.astype(float)
        S = self._w * np.sqrt(np.outer(c, c))
        d = S.diagonal() - self._w.diagonal() + self._p_diag
        S[np.diag_indices_from(S)] = d
        u = np.sqrt(c / self.m)
        deflated = S - np.outer(u, u)  # removes the eigenvalue 1 (ones mode)
        sig = float(np.abs(np.linalg.eigvalsh(deflated)).max())
        within = self._p_diag - self._w.diagonal()
        multi = self.counts >= 2
        if multi.any():
            sig = max(sig, float(np.abs(within[multi]).max()))
        return sig

    def run(self, n_loop: int) -> np.ndarray:
        """Per-group estimates over occupied bins after n_loop averaging rounds.

        Group estimates start as indicator vectors on the group's own bin, so
        the estimate matrix after n rounds is exactly the n-th power of the
        quotient weight matrix (column h holds mass on occupied bin h).
        """
        Q = self.weight_matrix()
        return np.linalg.matrix_power(Q, n_loop)
