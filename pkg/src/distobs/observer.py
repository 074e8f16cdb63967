"""Adaptive distributed observer nodes.

Each node runs

    z'    = Ebar z + Fbar y + Bbar u - H(d)
    xhat  = z + Gbar y
    d     = sum_j a_ij (xhat_i - xhat_j)
    H(d)  = gamma T_u eps + gamma_s T_u h(eps),    eps = T_u.T d

with adaptive gains

    gamma'   = -sigma   gamma   + phi   |eps|^2
    gamma_s' = -sigma_s gamma_s + phi_s |eps|

(``sigma = sigma_s = 0`` gives the non-leaky laws).  The gains ``Ebar``,
``Fbar``, ``Gbar``, ``Bbar`` come from a strong detectability
decomposition of the node's triplet.
"""

from dataclasses import dataclass, field

import numpy as np

from .decomposition import DecompositionQuadruplet, decompose
from .exceptions import DimensionMismatch, NotDetectable
from .linalg import DEFAULT_TOL, as_matrix, is_detectable, orthonormal_complement, solve_care

__all__ = [
    "AdaptiveSettings",
    "ObserverNode",
    "NodeState",
    "build_observer",
    "build_mas_observer",
    "embed_agents",
    "mas_riccati_gain",
    "sign_direction",
    "consensus_injection",
    "disagreement",
    "observer_rhs",
    "estimate",
    "DEAD_ZONE",
]

# |omega| below this is treated as zero by the unit-direction map
DEAD_ZONE = 1e-12


@dataclass(frozen=True)
class AdaptiveSettings:
    gamma0: float = 0.1
    gamma_s0: float = 0.1
    phi: float = 0.2
    phi_s: float = 0.5
    sigma: float = 0.0
    sigma_s: float = 0.0

    def __post_init__(self):
        if self.gamma0 < 0 or self.gamma_s0 < 0:
            raise ValueError("initial adaptive gains must be nonnegative")
        if self.phi < 0 or self.phi_s < 0 or self.sigma < 0 or self.sigma_s < 0:
            raise ValueError("step sizes and leakage must be nonnegative")


@dataclass(frozen=True, eq=False)
class ObserverNode:
    index: int
    quadruplet: DecompositionQuadruplet
    A: np.ndarray
    B_local: np.ndarray
    C: np.ndarray
    E_bar: np.ndarray
    F_bar: np.ndarray
    G_bar: np.ndarray
    B_bar: np.ndarray
    settings: AdaptiveSettings = field(default_factory=AdaptiveSettings)

    @property
    def T_d(self):
        return self.quadruplet.T_d

    @property
    def T_u(self):
        return self.quadruplet.T_u

    @property
    def n(self):
        return self.A.shape[0]

    def gain_identity_residuals(self):
        """Norm of each gain identity's defect (all should be ~1e-15)."""
        q, A = self.quadruplet, self.A
        Td, Tu = q.T_d, q.T_u
        PU = Tu @ Tu.T
        I = np.eye(self.n)
        return {
            "E_bar": np.linalg.norm(self.E_bar - (Td @ q.E @ Td.T + PU @ A)),
            "F_bar": np.linalg.norm(self.F_bar - (Td @ q.F + PU @ A @ self.G_bar)),
            "G_bar": np.linalg.norm(self.G_bar - Td @ q.G),
            "B_bar": np.linalg.norm(self.B_bar - (I - self.G_bar @ self.C) @ self.B_local),
        }


@dataclass
class NodeState:
    z: np.ndarray
    gamma: float
    gamma_s: float

    @classmethod
    def initial(cls, node):
        s = node.settings
        return cls(np.zeros(node.n), s.gamma0, s.gamma_s0)


def build_observer(index, A, B_local, B_minus, C, settings=None, quadruplet=None, tol=DEFAULT_TOL):
    """Assemble observer node `index` from its triplet.

    `quadruplet` may be supplied to skip the decomposition (for instance
    the block-selector quadruplet of a multi-agent system).
    """
    A = as_matrix(A, name="A")
    n = A.shape[0]
    C = as_matrix(C, cols=n, name="C_i")
    B_local = np.zeros((n, 0)) if B_local is None or np.size(B_local) == 0 else as_matrix(B_local, rows=n, name="B_i")
    if quadruplet is None:
        quadruplet = decompose(A, B_minus, C, tol)
    q = quadruplet
    Td, Tu = q.T_d, q.T_u
    PU = Tu @ Tu.T
    G_bar = Td @ q.G
    E_bar = Td @ q.E @ Td.T + PU @ A
    F_bar = Td @ q.F + PU @ A @ G_bar
    B_bar = (np.eye(n) - G_bar @ C) @ B_local
    return ObserverNode(index, q, A, B_local, C, E_bar, F_bar, G_bar, B_bar, settings or AdaptiveSettings())


def sign_direction(omega):
    """Unit vector along `omega`, or zero when `omega` is (numerically) zero."""
    omega = np.asarray(omega, dtype=float)
    norm = np.linalg.norm(omega)
    if norm < DEAD_ZONE:
        return np.zeros_like(omega)
    return omega / norm


def disagreement(xhat_i, neighbors):
    """``sum_j a_ij (xhat_i - xhat_j)`` for ``neighbors = [(a_ij, xhat_j), ...]``."""
    d = np.zeros_like(np.asarray(xhat_i, dtype=float))
    for a, xj in neighbors:
        d += a * (xhat_i - np.asarray(xj, dtype=float))
    return d


def consensus_injection(node, d, gamma, gamma_s):
    eps = node.T_u.T @ d
    return gamma * (node.T_u @ eps) + gamma_s * (node.T_u @ sign_direction(eps))


def estimate(node, z, y):
    return z + node.G_bar @ np.atleast_1d(y)


def observer_rhs(node, state, y, u, neighbors):
    """Time derivative of one node's internal state and adaptive gains.

    Parameters
    ----------
    node : ObserverNode
    state : NodeState
    y, u : array_like
        Local measurement and local input.
    neighbors : list of (a_ij, xhat_j)
        Current estimates of the neighbours with their edge weights.

    Returns
    -------
    (z_dot, gamma_dot, gamma_s_dot)
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float)) if np.size(u) else np.zeros(0)
    if y.shape[0] != node.C.shape[0] or u.shape[0] != node.B_local.shape[1]:
        raise DimensionMismatch(f"observer {node.index}: y has {y.shape[0]} entries, u has {u.shape[0]}")
    xhat = estimate(node, state.z, y)
    d = disagreement(xhat, neighbors)
    eps_norm = np.linalg.norm(node.T_u.T @ d)
    s = node.settings
    z_dot = node.E_bar @ state.z + node.F_bar @ y + node.B_bar @ u - consensus_injection(node, d, state.gamma, state.gamma_s)
    gamma_dot = -s.sigma * state.gamma + s.phi * eps_norm**2
    gamma_s_dot = -s.sigma_s * state.gamma_s + s.phi_s * eps_norm
    return z_dot, gamma_dot, gamma_s_dot


def embed_agents(agents):
    """Block-diagonal embedding of heterogeneous agents ``(A_i, B_i, C_i)``.

    Returns ``(A, B_blocks, C_blocks, selectors)`` where ``B_blocks[i]`` and
    ``C_blocks[i]`` are the agent matrices padded to the full state and
    ``selectors[i]`` is the ``n x n_i`` block selector.
    """
    agents = [tuple(as_matrix(M) for M in ag) for ag in agents]
    sizes = [ag[0].shape[0] for ag in agents]
    n = sum(sizes)
    A = np.zeros((n, n))
    B_blocks, C_blocks, selectors = [], [], []
    off = 0
    for (Ai, Bi, Ci), ni in zip(agents, sizes):
        sl = slice(off, off + ni)
        A[sl, sl] = Ai
        B = np.zeros((n, Bi.shape[1]))
        B[sl] = Bi
        C = np.zeros((Ci.shape[0], n))
        C[:, sl] = Ci
        S = np.zeros((n, ni))
        S[sl] = np.eye(ni)
        B_blocks.append(B)
        C_blocks.append(C)
        selectors.append(S)
        off += ni
    return A, B_blocks, C_blocks, selectors


def mas_riccati_gain(A_i, C_i, shift=0.2):
    """``L = -X C.T`` with X from the shifted observer Riccati equation (Q = I)."""
    A_i, C_i = as_matrix(A_i), as_matrix(C_i)
    X = solve_care(A_i, C_i, np.eye(A_i.shape[0]), shift=shift, form="observer")
    return -X @ C_i.T


def build_mas_observer(agents, gains=None, settings=None, shift=0.2, tol=DEFAULT_TOL):
    """Observer nodes for a heterogeneous multi-agent system.

    Agent ``i`` knows only its own input and output; its quadruplet is the
    block selector with ``E = A_i + L_i C_i``, ``F = -L_i``, ``G = 0``.
    Missing `gains` are designed with :func:`mas_riccati_gain`.
    """
    A, B_blocks, C_blocks, selectors = embed_agents(agents)
    nodes = []
    for i, ((Ai, Bi, Ci), Td) in enumerate(zip(agents, selectors)):
        Ai, Ci = as_matrix(Ai), as_matrix(Ci)
        if not is_detectable(Ai, Ci, tol):
            raise NotDetectable(f"agent {i + 1}: (A_i, C_i) is not detectable", "agent detectability")
        L = mas_riccati_gain(Ai, Ci, shift) if gains is None or gains[i] is None else as_matrix(gains[i])
        q = DecompositionQuadruplet(
            T_d=Td,
            T_u=orthonormal_complement(Td, tol),
            E=Ai + L @ Ci,
            F=-L,
            G=np.zeros((Ai.shape[0], Ci.shape[0])),
            e_mode="stable",
            info={"branch": "multi-agent block"},
        )
        node = build_observer(i, A, B_blocks[i], None, C_blocks[i], settings, quadruplet=q, tol=tol)
        nodes.append(node)
    return nodes
