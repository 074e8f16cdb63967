"""Strong detectability decomposition of a triplet ``(A, B_minus, C)``.

For a node that measures ``y = C x`` while the inputs entering through
``B_minus`` are unknown to it, :func:`decompose` finds an orthonormal
``T_d`` and matrices ``E, F, G`` such that the functional ``T_d.T x`` is
reconstructed by

    xi' = E xi + F y,    T_d.T x ~ xi + G y

despite the unknown inputs.  The defining conditions are

    T_d.T T_d = I
    G C B_minus = T_d.T B_minus
    E T_d.T + (G C - T_d.T) A + (F - E G) C = 0
    E Hurwitz, or E = 0 (then F = 0 and G C = T_d.T)

and :func:`verify_quadruplet` checks them independently of how the
quadruplet was produced.

The construction eliminates the unknown input by repeatedly differentiating
the output and annihilating the directions the unknown input can reach,
until a plain state/output pair ``(Pi3, Pi4)`` is left; the detectable part
of that pair is the reconstructible functional.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .exceptions import DimensionMismatch, PreconditionViolated
from .linalg import (
    DEFAULT_TOL,
    annihilator,
    as_matrix,
    gram_schmidt_rowspace,
    numerical_rank,
    orthonormal_complement,
    solve_care,
    spectrum_real_parts,
)

__all__ = [
    "STABLE",
    "ZERO",
    "DecompositionQuadruplet",
    "QuadrupletReport",
    "detectability_decomposition",
    "unobservable_subspace",
    "undetectable_subspace",
    "decompose",
    "verify_quadruplet",
]

STABLE = "stable"
ZERO = "zero"

# relative margin below which an eigenvalue counts as not strictly stable
_STABILITY_MARGIN = 1e-9


@dataclass(frozen=True)
class DecompositionQuadruplet:
    T_d: np.ndarray
    T_u: np.ndarray
    E: np.ndarray
    F: np.ndarray
    G: np.ndarray
    e_mode: str
    # bookkeeping from the construction, useful when debugging a node
    info: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def delta(self):
        return self.T_d.shape[1]

    @property
    def n(self):
        return self.T_d.shape[0]


def unobservable_subspace(P3, P4, tol=DEFAULT_TOL):
    """Largest ``P3``-invariant subspace inside ``ker P4`` (orthonormal basis).

    Computed by shrinking ``ker P4`` until it is invariant, which avoids
    forming powers of ``P3``.
    """
    k = P3.shape[0]
    N = orthonormal_complement(P4.T, tol) if P4.shape[0] else np.eye(k)
    scale = max(1.0, np.linalg.norm(P3))
    for _ in range(k + 1):
        if N.shape[1] == 0:
            return N
        leak = (P3 @ N) - N @ (N.T @ P3 @ N)
        Y = annihilator(leak.T / scale, tol).T
        if Y.shape[1] == N.shape[1]:
            return N
        N = N @ Y
    return N


def undetectable_subspace(P3, P4, tol=DEFAULT_TOL):
    """Orthonormal basis of the unobservable, not asymptotically stable part of ``(P3, P4)``.

    Inside the unobservable subspace an ordered real Schur form separates
    the eigenvalues with ``Re >= 0`` (counted with a small margin).
    """
    P3 = as_matrix(P3, name="P3")
    k = P3.shape[0]
    if k == 0:
        return np.zeros((0, 0))
    P4 = np.asarray(P4, dtype=float).reshape(-1, k)
    N = unobservable_subspace(P3, P4, tol)
    if N.shape[1] == 0:
        return N
    A_N = N.T @ P3 @ N
    margin = _STABILITY_MARGIN * max(1.0, np.linalg.norm(P3))
    _, Z, sdim = sla.schur(A_N, output="real", sort=lambda re, im: re > -margin)
    return N @ Z[:, :sdim]


def detectability_decomposition(P3, P4, tol=DEFAULT_TOL):
    """Orthogonal ``P`` splitting ``(P3, P4)`` into detectable and undetectable parts.

    Returns ``(P, r_d)`` such that ``P.T @ P3 @ P`` is block lower
    triangular with a detectable leading ``r_d x r_d`` block and
    ``P4 @ P == [P4d, 0]``.
    """
    P3 = as_matrix(P3, name="P3")
    k = P3.shape[0]
    if P3.shape != (k, k):
        raise DimensionMismatch("P3 must be square")
    P4 = np.asarray(P4, dtype=float).reshape(-1, k)
    U_und = undetectable_subspace(P3, P4, tol)
    W = orthonormal_complement(U_und, tol) if U_und.shape[1] else np.eye(k)
    return np.hstack([W, U_und]), W.shape[1]


def _stabilizing_injection(P3d, P4d):
    """``J2`` with ``P3d + J2 P4d`` Hurwitz, from the dual Riccati equation."""
    rd = P3d.shape[0]
    if P4d.shape[0] == 0:
        return np.zeros((rd, 0))
    X = solve_care(P3d, P4d, np.eye(rd), shift=0.0, form="observer")
    return -X @ P4d.T


def _check_preconditions(A, B_minus, C, tol):
    A = as_matrix(A, name="A")
    n = A.shape[0]
    if A.shape != (n, n):
        raise DimensionMismatch("A must be square")
    C = as_matrix(C, cols=n, name="C_i")
    if C.shape[0] == 0 or numerical_rank(C, tol) < C.shape[0]:
        raise PreconditionViolated("C_i must have full row rank", "C_i full row rank")
    if B_minus is None or np.size(B_minus) == 0:
        B_minus = np.zeros((n, 0))
    B_minus = as_matrix(B_minus, rows=n, name="B_minus")
    if B_minus.shape[1] and not np.any(B_minus):
        B_minus = np.zeros((n, 0))
    if numerical_rank(B_minus, tol) < B_minus.shape[1]:
        raise PreconditionViolated("B_minus must have full column rank", "B_minus full column rank")
    return A, B_minus, C


def _rank_normalizer(M, tol):
    """``(Phi, Psi, r)`` with ``Phi M Psi = [[I_r, 0], [0, 0]]``, both orthogonal up to scaling."""
    rows, cols = M.shape
    if M.size == 0:
        return np.eye(rows), np.eye(cols), 0
    U, s, Vt = np.linalg.svd(M, full_matrices=True)
    r = int(np.sum(s > tol.threshold(s[0]))) if s.size else 0
    scale = np.ones(rows)
    scale[:r] = 1.0 / s[:r]
    return scale[:, None] * U.T, Vt.T, r


def _full_column_normalizer(M):
    """``Phi`` with ``Phi M = [I; 0]`` for a full-column-rank `M`."""
    rows, c = M.shape
    U, s, Vt = np.linalg.svd(M, full_matrices=True)
    Phi = U.T.copy()
    Phi[:c] = (Vt.T / s) @ U[:, :c].T
    return Phi


def decompose(A, B_minus, C, tol=DEFAULT_TOL):
    """Compute a quadruplet ``(T_d, E, F, G)`` for the triplet ``(A, B_minus, C)``.

    Parameters
    ----------
    A : (n, n) array_like
    B_minus : (n, m) array_like
        Columns of unknown-input channels (full column rank); may be empty.
    C : (p, n) array_like
        Local output matrix (full row rank).

    Returns
    -------
    DecompositionQuadruplet

    Raises
    ------
    PreconditionViolated
        If `C` is rank deficient or `B_minus` lacks full column rank.
    """
    A, B_minus, C = _check_preconditions(A, B_minus, C, tol)
    n, p = A.shape[0], C.shape[0]
    info = {}

    if B_minus.shape[1] == 0:
        # no unknown inputs: plain detectability decomposition of (A, C)
        P_pi, r_d = detectability_decomposition(A, C, tol)
        info.update(branch="no-unknown-input", r_d=r_d)
        if r_d > p:
            P3d = (P_pi.T @ A @ P_pi)[:r_d, :r_d]
            P4d = (C @ P_pi)[:, :r_d]
            J2 = _stabilizing_injection(P3d, P4d)
            E0 = P3d + J2 @ P4d
            Td0T = P_pi[:, :r_d].T
            # K0 acts on [y; y']: the functional needs no output derivative here
            K0 = np.hstack([-J2, np.zeros((r_d, p))])
            return _finish(Td0T, E0, K0, p, STABLE, info, tol)
        return _finish(C, np.zeros((p, p)), np.hstack([np.zeros((p, p)), np.eye(p)]), p, ZERO, info, tol)

    m = B_minus.shape[1]
    # normalize [0; C B_minus] so its first r rows carry the rank
    Phi0, Psi0, r = _rank_normalizer(np.vstack([np.zeros((p, m)), C @ B_minus]), tol)
    # annihilate the unknown-input columns that do not reach the output
    BPsi = B_minus @ Psi0
    L11, L12 = BPsi[:, :r], BPsi[:, r:]
    Pi = Phi0 @ np.vstack([C, C @ A])
    Pi1, Pi2 = Pi[:r], Pi[r:]
    Xi1 = annihilator(L12, tol)
    r1 = Xi1.shape[0]
    Psi1 = np.hstack([Xi1.T, orthonormal_complement(Xi1.T, tol)])
    # differentiate once more and split off what the outputs still see
    L2 = np.vstack([Xi1 @ (A - L11 @ Pi1), -Pi2]) @ Psi1
    Lj1, Lj2 = L2[:, :r1], L2[:, r1:]
    Xi2 = annihilator(Lj2, tol)
    Xi21, Xi22 = Xi2[:, :r1], Xi2[:, r1:]
    info.update(r=r, r1=r1)

    Xij, Xij1 = Xi2, Xi21
    Phi = None
    chain = []
    r_d = 0
    Pi3 = Pi4 = None
    for j in range(2, n + 3):
        # full column rank ends the elimination; zero rank leaves nothing to reconstruct
        rank_j1 = numerical_rank(Xij1, tol) if Xij1.size else 0
        if Xij1.size == 0 or rank_j1 == 0:
            r_d = 0
            break
        if rank_j1 == Xij1.shape[1]:
            Phij = _full_column_normalizer(Xij1)
            Phi = Phij if Phi is None else Phij @ Xij @ Phi
            PiStack = Phij @ Xij @ Lj1
            c = Xij1.shape[1]
            Pi3, Pi4 = PiStack[:c], PiStack[c:]
            break
        # otherwise normalize and annihilate the next unknown-input block
        Phij, Psij, rj = _rank_normalizer(Xij1, tol)
        Lnext = Phij @ Xij @ Lj1 @ Psij
        Phi = Phij if Phi is None else Phij @ Xij @ Phi
        Lj1, Lj2 = Lnext[:, :rj], Lnext[:, rj:]
        Xij = annihilator(Lj2, tol)
        Xij1 = Xij[:, :rj]
        chain.append(rj)
    else:
        raise RuntimeError("unknown-input elimination did not terminate within n + 1 steps")
    info["chain"] = chain

    if Pi3 is not None:
        # detectable part of the reduced (Pi3, Pi4) pair
        P_pi, r_d = detectability_decomposition(Pi3, Pi4, tol)
    info["r_d"] = r_d
    if r_d > p:
        # more detectable directions than outputs: stabilized functional observer
        T3 = P_pi.T @ Pi3 @ P_pi
        P3d = T3[:r_d, :r_d]
        P4d = (Pi4 @ P_pi)[:, :r_d]
        c = Pi3.shape[0]
        J1 = np.hstack([np.eye(r_d), np.zeros((r_d, c - r_d))]) @ P_pi.T
        J2 = _stabilizing_injection(P3d, P4d)
        J = np.hstack([J1, J2])
        E0 = P3d + J2 @ P4d
        Td0T = J @ Phi @ Xi21 @ Xi1
        K0 = np.hstack([Td0T @ L11, J @ Phi @ Xi22]) @ Phi0
        info["branch"] = "detectable-functional"
        return _finish(Td0T, E0, K0, p, STABLE, info, tol)
    info["branch"] = "output-only"
    return _finish(C, np.zeros((p, p)), np.hstack([np.zeros((p, p)), np.eye(p)]), p, ZERO, info, tol)


def _finish(Td0T, E0, K0, p, e_mode, info, tol):
    # orthonormalize the functional and carry E, F, G along
    Tt, T_d = gram_schmidt_rowspace(Td0T, tol)
    E = Tt @ E0 @ np.linalg.inv(Tt)
    G = Tt @ K0[:, p:]
    if e_mode == ZERO:
        E = np.zeros_like(E)
        F = np.zeros_like(G)
    else:
        F = E @ G + Tt @ K0[:, :p]
    T_u = orthonormal_complement(T_d, tol)
    return DecompositionQuadruplet(T_d=T_d, T_u=T_u, E=E, F=F, G=G, e_mode=e_mode, info=info)


@dataclass
class QuadrupletReport:
    residuals: dict
    tol: float

    @property
    def passed(self):
        return all(v < self.tol for v in self.residuals.values())

    def failures(self):
        return {k: v for k, v in self.residuals.items() if not v < self.tol}

    def __str__(self):
        lines = [f"{'PASS' if v < self.tol else 'FAIL'} {k}: {v:.3e}" for k, v in self.residuals.items()]
        return "\n".join(lines)


def verify_quadruplet(A, B_minus, C, q, tol=1e-8):
    """Residual of every defining condition of a quadruplet.

    A failing certificate is reported, not raised.  Stability of ``E`` is
    reported as ``max(0, spectral abscissa)`` so that it too passes when
    below `tol`; in zero mode the ``E``, ``F`` and ``G C - T_d.T``
    magnitudes are reported instead.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    C = np.atleast_2d(np.asarray(C, dtype=float))
    B_minus = np.zeros((n, 0)) if B_minus is None or np.size(B_minus) == 0 else np.asarray(B_minus, float)
    Td, Tu, E, F, G = q.T_d, q.T_u, q.E, q.F, q.G
    d = Td.shape[1]
    res = {
        "orthonormal T_d": np.linalg.norm(Td.T @ Td - np.eye(d)),
        "T_d.T T_u": np.linalg.norm(Td.T @ Tu) if Tu.size else 0.0,
        "orthonormal T_u": np.linalg.norm(Tu.T @ Tu - np.eye(Tu.shape[1])) if Tu.size else 0.0,
        "complement projector": np.linalg.norm(Tu @ Tu.T + Td @ Td.T - np.eye(n)),
        "unknown-input decoupling": np.linalg.norm(G @ C @ B_minus - Td.T @ B_minus) if B_minus.size else 0.0,
        "Sylvester condition": np.linalg.norm(E @ Td.T + (G @ C - Td.T) @ A + (F - E @ G) @ C),
    }
    if q.e_mode == ZERO:
        res["zero E"] = np.linalg.norm(E)
        res["zero F"] = np.linalg.norm(F)
        res["G C = T_d.T"] = np.linalg.norm(G @ C - Td.T)
    else:
        re = spectrum_real_parts(E)
        res["E Hurwitz"] = 0.0 if not re or re[0] < 0 else max(re[0], 1.0)
    return QuadrupletReport({k: float(v) for k, v in res.items()}, tol)
