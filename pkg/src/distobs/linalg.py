"""Dense real-matrix kernels.

Orthonormal bases, annihilators, Gram-Schmidt on row spaces, and the two
matrix equations used by the gain syntheses (continuous algebraic Riccati
and Lyapunov).  Every rank decision in the package goes through
:class:`Tolerance` so chained algorithms make consistent choices.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .exceptions import DimensionMismatch, NotStabilizable, RankDeficient, UnstableF

__all__ = [
    "Tolerance",
    "DEFAULT_TOL",
    "as_matrix",
    "numerical_rank",
    "orthonormal_range_basis",
    "annihilator",
    "orthonormal_complement",
    "gram_schmidt_rowspace",
    "solve_care",
    "solve_lyapunov",
    "spectrum_real_parts",
    "spectral_abscissa",
    "spans_equal",
    "subspace_angle",
    "is_detectable",
]


@dataclass(frozen=True)
class Tolerance:
    """Rank threshold ``max(relative * s_max, absolute)`` on singular values."""

    relative: float = 1e-9
    absolute: float = 1e-11

    def __post_init__(self):
        if not (self.relative > 0 and self.absolute >= 0):
            raise ValueError("tolerance must be strictly positive")

    def threshold(self, s_max):
        return max(self.relative * s_max, self.absolute)


DEFAULT_TOL = Tolerance()


def as_matrix(M, rows=None, cols=None, name="matrix"):
    """Return `M` as a finite 2-D float array, checking optional shape."""
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M.reshape(1, -1) if M.size else M.reshape(0, 0)
    if M.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} has non-finite entries")
    if rows is not None and M.shape[0] != rows:
        raise DimensionMismatch(f"{name} has {M.shape[0]} rows, expected {rows}")
    if cols is not None and M.shape[1] != cols:
        raise DimensionMismatch(f"{name} has {M.shape[1]} columns, expected {cols}")
    return M


def _svd(M):
    if M.size == 0:
        k = min(M.shape)
        return np.eye(M.shape[0]), np.zeros(k), np.eye(M.shape[1])
    return np.linalg.svd(M, full_matrices=True)


def numerical_rank(M, tol=DEFAULT_TOL):
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(s > tol.threshold(s[0])))


def _rank_from(s, tol):
    if s.size == 0:
        return 0
    return int(np.sum(s > tol.threshold(s[0])))


def orthonormal_range_basis(M, tol=DEFAULT_TOL):
    """Orthonormal basis of the column space of `M`.

    The number of returned columns is the numerical rank of `M`; a zero
    matrix gives an ``(rows, 0)`` array.
    """
    M = as_matrix(M)
    U, s, _ = _svd(M)
    return U[:, : _rank_from(s, tol)].copy()


def annihilator(M, tol=DEFAULT_TOL):
    """Orthonormal rows spanning the left null space of `M`.

    ``annihilator(M) @ M == 0`` and the row count is ``rows(M) - rank(M)``.
    A matrix with no columns is annihilated only by the identity.
    """
    M = as_matrix(M)
    U, s, _ = _svd(M)
    r = _rank_from(s, tol)
    return U[:, r:].T.copy()


def orthonormal_complement(T, tol=DEFAULT_TOL):
    """Orthonormal basis of the orthogonal complement of ``Im T``."""
    return annihilator(T, tol).T


def gram_schmidt_rowspace(M, tol=DEFAULT_TOL):
    """Orthonormalize the rows of a full-row-rank matrix.

    Returns ``(Ttilde, T)`` with ``Ttilde @ M == T.T``, ``Ttilde`` lower
    triangular with positive diagonal (classical Gram-Schmidt order) and
    ``T`` having orthonormal columns.
    """
    M = as_matrix(M)
    k = M.shape[0]
    if k == 0:
        return np.zeros((0, 0)), np.zeros((M.shape[1], 0))
    if numerical_rank(M, tol) < k:
        raise RankDeficient("rows of M are linearly dependent")
    Q, R = np.linalg.qr(M.T)
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    Q = Q * signs
    R = R * signs[:, None]
    # M.T = Q R  =>  R^{-T} M = Q^T
    Ttilde = sla.solve_triangular(R, np.eye(k), trans="T", lower=False)
    return Ttilde, Q


def spectrum_real_parts(M):
    """Real parts of the eigenvalues of `M`, sorted descending."""
    M = as_matrix(M)
    if M.shape[0] != M.shape[1]:
        raise DimensionMismatch("spectrum requires a square matrix")
    if M.size == 0:
        return []
    return sorted(np.linalg.eigvals(M).real.tolist(), reverse=True)


def spectral_abscissa(M):
    re = spectrum_real_parts(M)
    return re[0] if re else -np.inf


def solve_lyapunov(F, Q):
    """Solve ``F.T @ P + P @ F + Q = 0`` for symmetric `P`.

    Uses the Kronecker (vectorized) form directly, which is fine for the
    small systems this package targets.

    Raises
    ------
    UnstableF
        If `F` has an eigenvalue with nonnegative real part.
    """
    F = as_matrix(F, name="F")
    n = F.shape[0]
    Q = as_matrix(Q, n, n, name="Q")
    if F.shape != (n, n):
        raise DimensionMismatch("F must be square")
    if n == 0:
        return np.zeros((0, 0))
    if spectral_abscissa(F) >= 0:
        raise UnstableF("F is not Hurwitz")
    I = np.eye(n)
    # column-major vec: vec(F^T P) = (I kron F^T) vec P, vec(P F) = (F^T kron I) vec P
    K = np.kron(I, F.T) + np.kron(F.T, I)
    p = np.linalg.solve(K, -Q.reshape(-1, order="F"))
    P = p.reshape(n, n, order="F")
    return 0.5 * (P + P.T)


def care_residual(A, B, Q, X, shift=0.0, form="control"):
    """Residual matrix of the Riccati equation solved by :func:`solve_care`."""
    As = A + shift * np.eye(A.shape[0])
    if form == "observer":
        return As @ X + X @ As.T - X @ B.T @ B @ X + Q
    return As.T @ X + X @ As - X @ B @ B.T @ X + Q


def _initial_gain(As, B):
    """Stabilizing gain K with ``As - B K`` Hurwitz, or None."""
    n = As.shape[0]
    if spectral_abscissa(As) < -1e-6 * max(1.0, np.linalg.norm(As)):
        return np.zeros((B.shape[1], n))
    if B.shape[1] == 0:
        return None
    # Bass: -(As + a I) Hurwitz, (As + a I) Z + Z (As + a I)^T = 2 B B^T, K = B^T Z^{-1}
    a = max(0.0, -min(spectrum_real_parts(As))) + 1.0 + np.linalg.norm(As, 2)
    try:
        Z = solve_lyapunov(-(As + a * np.eye(n)).T, 2.0 * B @ B.T)
        if np.linalg.cond(Z) < 1e10:
            K = B.T @ np.linalg.inv(Z)
            if spectral_abscissa(As - B @ K) < 0:
                return K
    except (np.linalg.LinAlgError, UnstableF):
        pass
    # (As, B) stabilizable but not controllable: seed from the Schur-based solver
    try:
        X0 = sla.solve_continuous_are(As, B, np.eye(n), np.eye(B.shape[1]))
    except (np.linalg.LinAlgError, ValueError):
        return None
    K = B.T @ X0
    return K if spectral_abscissa(As - B @ K) < 0 else None


def solve_care(A, B, Q, shift=0.0, form="control", max_iter=60):
    """Stabilizing solution of a continuous algebraic Riccati equation.

    ``form="control"`` solves ``As.T X + X As - X B B.T X + Q = 0`` and
    ``form="observer"`` solves ``As X + X As.T - X B.T B X + Q = 0``
    (pass the output matrix as `B`), where ``As = A + shift * I``.

    Newton-Kleinman iteration from a stabilizing initial gain; every
    Newton step is one Lyapunov solve.

    Raises
    ------
    NotStabilizable
        If no stabilizing solution can be reached.
    """
    A = as_matrix(A, name="A")
    n = A.shape[0]
    B = as_matrix(B, name="B")
    Q = as_matrix(Q, n, n, name="Q")
    if form == "observer":
        B = as_matrix(B, cols=n, name="C")
        Ac, Bc = A.T, B.T
    elif form == "control":
        B = as_matrix(B, rows=n, name="B")
        Ac, Bc = A, B
    else:
        raise ValueError(f"unknown form {form!r}")
    As = Ac + shift * np.eye(n)
    K = _initial_gain(As, Bc)
    if K is None:
        raise NotStabilizable("no stabilizing initial gain for (A + shift I, B)")
    Qs = 0.5 * (Q + Q.T)
    X = None
    scale = max(1.0, np.linalg.norm(Qs))
    for _ in range(max_iter):
        Acl = As - Bc @ K
        try:
            X_new = solve_lyapunov(Acl, Qs + K.T @ K)
        except UnstableF as exc:
            raise NotStabilizable("Newton iterate lost stability") from exc
        K = Bc.T @ X_new
        if X is not None and np.linalg.norm(X_new - X) <= 1e-14 * max(1.0, np.linalg.norm(X_new)):
            X = X_new
            break
        X = X_new
        R = As.T @ X + X @ As - X @ Bc @ Bc.T @ X + Qs
        if np.linalg.norm(R) < 1e-13 * scale:
            break
    if spectral_abscissa(As - Bc @ Bc.T @ X) >= 0:
        raise NotStabilizable("Riccati iteration did not reach a stabilizing solution")
    return 0.5 * (X + X.T)


def spans_equal(T_a, T_b, tol=DEFAULT_TOL):
    """True iff ``Im T_a == Im T_b``."""
    T_a = as_matrix(T_a, name="T_a")
    T_b = as_matrix(T_b, rows=T_a.shape[0], name="T_b")
    ra, rb = numerical_rank(T_a, tol), numerical_rank(T_b, tol)
    return ra == rb == numerical_rank(np.hstack([T_a, T_b]), tol)


def subspace_angle(T_a, T_b, tol=DEFAULT_TOL):
    """Largest principal angle between ``Im T_a`` and ``Im T_b`` (radians).

    Subspaces of different dimension are reported as ``pi / 2`` apart.
    """
    Qa = orthonormal_range_basis(T_a, tol)
    Qb = orthonormal_range_basis(T_b, tol)
    if Qa.shape[1] != Qb.shape[1]:
        return np.pi / 2
    if Qa.shape[1] == 0:
        return 0.0
    return float(np.max(sla.subspace_angles(Qa, Qb)))


def is_detectable(A, C, tol=DEFAULT_TOL):
    """PBH test: ``rank [A - lam I; C] == n`` for every eigenvalue with Re >= 0."""
    A = as_matrix(A, name="A")
    n = A.shape[0]
    C = as_matrix(C, cols=n, name="C") if np.size(C) else np.zeros((0, n))
    for lam in np.linalg.eigvals(A):
        if lam.real < -tol.relative * max(1.0, np.linalg.norm(A)):
            continue
        M = np.vstack([A - lam * np.eye(n), C])
        s = np.linalg.svd(M, compute_uv=False)
        if np.sum(s > tol.threshold(max(s[0], 1.0))) < n:
            return False
    return True
