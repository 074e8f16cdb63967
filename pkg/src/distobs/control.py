"""Distributed controller nodes driven by observer estimates.

Four laws are available for controller ``k`` reading the estimate ``xhat``
of its source observer:

* linear:            u = K xhat
* tracking:          u = K xhat + r(t)
* ideal sliding:     u = K xhat - beta h(B.T P xhat)
* adaptive sliding:  u = K xhat - beta h_eps(B.T P xhat),
                     beta' = -sigma beta + phi |B.T P xhat|

plus the reference system used by the tracking law and the matched
unknown-input generator.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .exceptions import DimensionMismatch, PreconditionViolated
from .linalg import as_matrix, solve_care, solve_lyapunov
from .observer import DEAD_ZONE, sign_direction

__all__ = [
    "LINEAR",
    "TRACKING",
    "SLIDING_IDEAL",
    "SLIDING_ADAPTIVE",
    "MODES",
    "SineSignal",
    "ControllerNode",
    "UnknownInputModel",
    "linear_feedback",
    "tracking_feedback",
    "reference_rhs",
    "sliding_ideal",
    "boundary_layer_direction",
    "sliding_adaptive_rhs",
    "controller_output",
    "unknown_input_value",
    "riccati_feedback",
    "sliding_surface_matrix",
    "matching_witness",
    "ideal_beta_bound",
    "lyapunov_certificate",
    "centralized_linear",
    "centralized_sliding",
]

LINEAR = "linear"
TRACKING = "tracking"
SLIDING_IDEAL = "sliding_ideal"
SLIDING_ADAPTIVE = "sliding_adaptive"
MODES = (LINEAR, TRACKING, SLIDING_IDEAL, SLIDING_ADAPTIVE)


@dataclass(frozen=True)
class SineSignal:
    """``amplitude * sin(frequency * t + phase)``, elementwise over vectors."""

    amplitude: tuple
    frequency: tuple
    phase: tuple

    def __post_init__(self):
        a, f, p = (tuple(np.atleast_1d(np.asarray(v, float)).tolist()) for v in (self.amplitude, self.frequency, self.phase))
        if not len(a) == len(f) == len(p):
            raise DimensionMismatch("sine signal components differ in length")
        object.__setattr__(self, "amplitude", a)
        object.__setattr__(self, "frequency", f)
        object.__setattr__(self, "phase", p)

    @property
    def dim(self):
        return len(self.amplitude)

    def __call__(self, t):
        return np.asarray(self.amplitude) * np.sin(np.asarray(self.frequency) * t + np.asarray(self.phase))


@dataclass(frozen=True, eq=False)
class ControllerNode:
    index: int
    B: np.ndarray
    K: np.ndarray
    mode: str = LINEAR
    source: int = 0
    reference: SineSignal = None
    P: np.ndarray = None
    beta0: float = 0.0
    epsilon: float = 0.0
    sigma: float = 0.0
    phi: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown controller mode {self.mode!r}")
        B = as_matrix(self.B, name="B")
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "K", as_matrix(self.K, rows=B.shape[1], cols=B.shape[0], name="K"))
        if self.mode == TRACKING and self.reference is None:
            raise PreconditionViolated("tracking controller needs a reference signal")
        if self.mode in (SLIDING_IDEAL, SLIDING_ADAPTIVE):
            if self.P is None:
                raise PreconditionViolated("sliding controller needs P")
            object.__setattr__(self, "P", as_matrix(self.P, B.shape[0], B.shape[0], name="P"))
        if self.mode == SLIDING_ADAPTIVE and not (self.beta0 > 0 and self.sigma > 0 and self.phi > 0 and self.epsilon > 0):
            raise PreconditionViolated(
                "adaptive sliding needs positive beta0, sigma, phi and epsilon", "adaptive sliding parameters"
            )

    @property
    def m(self):
        return self.B.shape[1]

    def surface(self, xhat):
        return self.B.T @ self.P @ xhat


@dataclass(frozen=True, eq=False)
class UnknownInputModel:
    """``v' = S v`` entering the plant through ``B_v = B X_v``."""

    S: np.ndarray
    v0: np.ndarray
    B_v: np.ndarray
    X_v: np.ndarray = None

    def __post_init__(self):
        S = as_matrix(self.S, name="S_v")
        v0 = np.asarray(self.v0, dtype=float).reshape(-1)
        if S.shape != (v0.size, v0.size):
            raise DimensionMismatch("generator and initial value disagree")
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "v0", v0)
        object.__setattr__(self, "B_v", as_matrix(self.B_v, cols=v0.size, name="B_v"))

    @property
    def bound(self):
        """Sup of |v(t)|; exact for skew-symmetric generators."""
        if np.allclose(self.S, -self.S.T):
            return float(np.linalg.norm(self.v0))
        if np.max(np.linalg.eigvals(self.S).real) < 0:
            # crude but valid for Hurwitz S: |exp(St)| <= cond(V) for diagonalizable S
            w, V = np.linalg.eig(self.S)
            return float(np.linalg.cond(V) * np.linalg.norm(self.v0))
        return float("inf")


def linear_feedback(node, xhat):
    xhat = np.asarray(xhat, dtype=float)
    if xhat.shape != (node.K.shape[1],):
        raise DimensionMismatch(f"controller {node.index}: estimate has shape {xhat.shape}")
    return node.K @ xhat


def tracking_feedback(node, xhat, t):
    u = linear_feedback(node, xhat)
    return u + node.reference(t) if node.reference is not None else u


def reference_rhs(A, controllers, x_r, t):
    """Reference system ``x_r' = A x_r + sum_k B_k (K_k x_r + r_k(t))``."""
    dx = A @ x_r
    for c in controllers:
        r = c.reference(t) if c.reference is not None else 0.0
        dx = dx + c.B @ (c.K @ x_r + r)
    return dx


def sliding_ideal(node, xhat, beta=None):
    beta = node.beta0 if beta is None else beta
    return linear_feedback(node, xhat) - beta * sign_direction(node.surface(xhat))


def boundary_layer_direction(omega, beta, epsilon):
    """Unit direction outside the boundary layer, linear ``beta omega / epsilon`` inside."""
    omega = np.asarray(omega, dtype=float)
    norm = np.linalg.norm(omega)
    if beta * norm > epsilon and norm > DEAD_ZONE:
        return omega / norm
    return (beta / epsilon) * omega


def sliding_adaptive_rhs(node, xhat, beta):
    """Control value and ``beta'`` for the adaptive boundary-layer law."""
    s = node.surface(xhat)
    u = linear_feedback(node, xhat) - beta * boundary_layer_direction(s, beta, node.epsilon)
    beta_dot = -node.sigma * beta + node.phi * np.linalg.norm(s)
    return u, beta_dot


def controller_output(node, xhat, t, beta=None):
    """Dispatch on the controller mode; `beta` is the current adaptive gain."""
    if node.mode == LINEAR:
        return linear_feedback(node, xhat)
    if node.mode == TRACKING:
        return tracking_feedback(node, xhat, t)
    if node.mode == SLIDING_IDEAL:
        return sliding_ideal(node, xhat, beta)
    return sliding_adaptive_rhs(node, xhat, node.beta0 if beta is None else beta)[0]


def unknown_input_value(model, t):
    return sla.expm(model.S * t) @ model.v0


def riccati_feedback(A, channels, shift=0.2, Q=None):
    """Per-channel gains ``K_k = -B_k.T X`` from the shifted control Riccati equation."""
    A = as_matrix(A)
    B = np.hstack([as_matrix(Bk) for Bk in channels])
    Q = np.eye(A.shape[0]) if Q is None else as_matrix(Q)
    X = solve_care(A, B, Q, shift=shift, form="control")
    return X, [-as_matrix(Bk).T @ X for Bk in channels]


def sliding_surface_matrix(A, channels, gains):
    """``P`` solving ``(A + sum B_k K_k).T P + P (A + sum B_k K_k) = -I``."""
    Acl = A + sum(as_matrix(Bk) @ as_matrix(Kk) for Bk, Kk in zip(channels, gains))
    return solve_lyapunov(Acl, np.eye(A.shape[0]))


def matching_witness(B, B_v, tol=1e-10):
    """``X_v`` with ``B X_v = B_v``; raises if the unknown input is unmatched."""
    B, B_v = as_matrix(B), as_matrix(B_v)
    X_v = np.linalg.lstsq(B, B_v, rcond=None)[0]
    if np.linalg.norm(B @ X_v - B_v) > tol * max(1.0, np.linalg.norm(B_v)):
        raise PreconditionViolated("unknown input is not matched to the control channels", "matching")
    return X_v


def ideal_beta_bound(v_bar, X_v, B_tilde=None):
    """Smallest admissible fixed switching gain ``v_bar |B_tilde X_v|``."""
    X_v = as_matrix(X_v)
    M = X_v if B_tilde is None else as_matrix(B_tilde) @ X_v
    return float(v_bar * np.linalg.norm(M, 2))


def lyapunov_certificate(A, controllers, P):
    """Largest eigenvalue of ``Acl.T P + P Acl``; negative means certified."""
    Acl = A + sum(c.B @ c.K for c in controllers)
    M = Acl.T @ P + P @ Acl
    return float(np.max(np.linalg.eigvalsh(0.5 * (M + M.T))))


def centralized_linear(K, x):
    return K @ x


def centralized_sliding(K, B, P, beta, x):
    """True-state sliding law ``u = K x - beta h(B.T P x)``."""
    return K @ x - beta * sign_direction(B.T @ P @ x)
