"""Undirected weighted communication graphs between observer nodes."""

from collections import deque
from dataclasses import dataclass

import numpy as np

from .exceptions import InconsistentChecks, ValidationError
from .linalg import DEFAULT_TOL, as_matrix, numerical_rank, orthonormal_complement

__all__ = [
    "CommGraph",
    "laplacian",
    "is_connected",
    "algebraic_connectivity",
    "consensus_matrix",
    "collective_strong_detectability",
]


@dataclass(frozen=True)
class CommGraph:
    """Observer-to-observer links.

    Nodes are numbered ``0 .. node_count - 1``.  Each undirected edge is a
    triple ``(i, j, weight)`` with ``weight > 0``; listing an edge once is
    enough, and the same pair may not appear twice.
    """

    node_count: int
    edges: tuple = ()

    def __post_init__(self):
        edges = tuple((int(i), int(j), float(w)) for i, j, w in self.edges)
        object.__setattr__(self, "edges", edges)
        errors = []
        if self.node_count < 1:
            errors.append("graph needs at least one node")
        seen = set()
        for i, j, w in edges:
            if i == j:
                errors.append(f"self-loop at node {i}")
            if not (0 <= i < self.node_count and 0 <= j < self.node_count):
                errors.append(f"edge ({i}, {j}) references a missing node")
            if not w > 0:
                errors.append(f"edge ({i}, {j}) has non-positive weight {w}")
            key = (min(i, j), max(i, j))
            if key in seen:
                errors.append(f"edge ({i}, {j}) listed twice")
            seen.add(key)
        if errors:
            raise ValidationError(errors)

    @classmethod
    def from_pairs(cls, node_count, pairs, weight=1.0):
        return cls(node_count, tuple((i, j, weight) for i, j in pairs))

    @classmethod
    def ring(cls, node_count, weight=1.0):
        if node_count == 1:
            return cls(1)
        if node_count == 2:
            return cls.from_pairs(2, [(0, 1)], weight)
        return cls.from_pairs(node_count, [(k, (k + 1) % node_count) for k in range(node_count)], weight)

    @property
    def adjacency(self):
        Adj = np.zeros((self.node_count, self.node_count))
        for i, j, w in self.edges:
            Adj[i, j] = Adj[j, i] = w
        return Adj

    def neighbors(self, i):
        return [j for j, w in enumerate(self.adjacency[i]) if w > 0]


def laplacian(g):
    Adj = g.adjacency
    return np.diag(Adj.sum(axis=1)) - Adj


def is_connected(g):
    """Breadth-first reachability from node 0."""
    Adj = g.adjacency
    seen = {0}
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j in np.flatnonzero(Adj[i]):
            if j not in seen:
                seen.add(int(j))
                queue.append(int(j))
    return len(seen) == g.node_count


def algebraic_connectivity(g):
    """Second-smallest Laplacian eigenvalue (diagnostic only)."""
    if g.node_count < 2:
        return 0.0
    return float(np.sort(np.linalg.eigvalsh(laplacian(g)))[1])


def consensus_matrix(g, bases):
    """``diag(X_i).T (L kron I_n) diag(X_i)`` for orthonormal blocks ``X_i``."""
    n = bases[0].shape[0]
    D = _block_diag_columns(bases, n)
    return D.T @ np.kron(laplacian(g), np.eye(n)) @ D


def _block_diag_columns(blocks, n):
    cols = sum(b.shape[1] for b in blocks)
    D = np.zeros((n * len(blocks), cols))
    c = 0
    for k, b in enumerate(blocks):
        D[k * n:(k + 1) * n, c:c + b.shape[1]] = b
        c += b.shape[1]
    return D


def collective_strong_detectability(g, bases, tol=DEFAULT_TOL, return_details=False):
    """Check that the node subspaces ``Im T_id`` sum to the whole state space.

    Two routes are evaluated and must agree: the rank of ``[T_1d ... T_Nd]``
    and positive definiteness of the consensus matrix built from the
    orthonormal complements ``T_iu`` (whose intersection is trivial exactly
    when the ``T_id`` spans add up to R^n on a connected graph).
    """
    if len(bases) != g.node_count:
        raise ValidationError(f"{len(bases)} bases for a {g.node_count}-node graph")
    bases = [as_matrix(T, name=f"T_{k}d") for k, T in enumerate(bases)]
    n = bases[0].shape[0]
    rank_route = numerical_rank(np.hstack(bases), tol) == n if n else True
    complements = [orthonormal_complement(T, tol) for T in bases]
    if sum(c.shape[1] for c in complements) == 0:
        min_eig = np.inf
    else:
        M = consensus_matrix(g, complements)
        min_eig = float(np.min(np.linalg.eigvalsh(0.5 * (M + M.T))))
    matrix_route = min_eig > 1e3 * tol.absolute
    if not is_connected(g):
        # the matrix test needs connectivity; only the rank route is meaningful here.
        matrix_route = rank_route
    elif rank_route != matrix_route:
        raise InconsistentChecks(
            f"rank test says {rank_route} but the consensus matrix has min eigenvalue {min_eig:.3e}"
        )
    if return_details:
        return rank_route, {"rank_test": rank_route, "consensus_min_eigenvalue": min_eig}
    return rank_route
