"""Fixed-step closed-loop integration.

The plant, the optional reference system and unknown-input generator, all
observer nodes and all controllers are stacked into a single flat state and
advanced together with classical RK4, so every sub-system sees the same
stage snapshot.  The observer right-hand side is evaluated for all nodes at
once with batched numpy products; :func:`distobs.observer.observer_rhs`
is the per-node reference it is tested against.
"""

from dataclasses import dataclass

import numpy as np

from .control import SLIDING_ADAPTIVE, SLIDING_IDEAL, TRACKING, ControllerNode
from .exceptions import DimensionMismatch, Diverged, PreconditionViolated
from .graph import CommGraph, collective_strong_detectability, is_connected, laplacian
from .linalg import DEFAULT_TOL, as_matrix, spectral_abscissa
from .observer import DEAD_ZONE, NodeState, observer_rhs

__all__ = [
    "CENTRAL",
    "ExogenousInput",
    "ClosedLoop",
    "TrajectoryRecord",
    "rk4_step",
    "run",
    "metrics",
    "settling_time",
    "structural_bound_ratio",
    "DIVERGENCE_LIMIT",
]

DIVERGENCE_LIMIT = 1e9

# controller source index meaning "read the true plant state"
CENTRAL = -1


@dataclass(frozen=True, eq=False)
class ExogenousInput:
    """An input channel driven by a known time signal instead of a controller."""

    B: np.ndarray
    signal: object

    def __post_init__(self):
        object.__setattr__(self, "B", as_matrix(self.B, name="B"))


def rk4_step(f, t, y, h):
    """One classical RK4 step of ``y' = f(t, y)``."""
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@dataclass(eq=False)
class ClosedLoop:
    """Plant ``x' = A x + sum_c B_c u_c + B_v v`` with its observer network.

    Parameters
    ----------
    A : (n, n) array
    drivers : list of ControllerNode or ExogenousInput
        One entry per input channel, in plant order.
    observers : list of ObserverNode
    observer_channels : list of list of int
        Channels whose values observer ``i`` knows; their ``B`` blocks,
        stacked, must equal the observer's local input matrix.
    graph : CommGraph
    x0 : (n,) array
    unknown_input : UnknownInputModel, optional
    x_r0 : (n,) array, optional
        Initial reference state; the reference system is integrated
        whenever any controller is in tracking mode.
    """

    A: np.ndarray
    drivers: list
    observers: list
    observer_channels: list
    graph: CommGraph
    x0: np.ndarray
    unknown_input: object = None
    x_r0: np.ndarray = None
    name: str = "closed loop"

    def __post_init__(self):
        self.A = as_matrix(self.A, name="A")
        n = self.A.shape[0]
        self.x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        if self.x0.shape != (n,):
            raise DimensionMismatch(f"x0 has {self.x0.size} entries, plant has {n} states")
        if len(self.observer_channels) != len(self.observers):
            raise DimensionMismatch("one channel list per observer is required")
        if self.graph.node_count != len(self.observers):
            raise DimensionMismatch(f"graph has {self.graph.node_count} nodes for {len(self.observers)} observers")
        for k, d in enumerate(self.drivers):
            if d.B.shape[0] != n:
                raise DimensionMismatch(f"channel {k + 1}: B has {d.B.shape[0]} rows")
        for i, (node, chans) in enumerate(zip(self.observers, self.observer_channels)):
            if node.n != n:
                raise DimensionMismatch(f"observer {i + 1} is built for {node.n} states")
            if any(not 0 <= c < len(self.drivers) for c in chans):
                raise DimensionMismatch(f"observer {i + 1} references a missing channel")
            Bk = np.hstack([self.drivers[c].B for c in chans]) if chans else np.zeros((n, 0))
            if Bk.shape != node.B_local.shape or not np.allclose(Bk, node.B_local, atol=1e-12):
                raise DimensionMismatch(f"observer {i + 1}: known channels do not match its local input matrix")
        for c in self.controllers:
            if not (c.source == CENTRAL or 0 <= c.source < len(self.observers)):
                raise DimensionMismatch(f"controller {c.index}: source observer {c.source} does not exist")
        if self.tracking and self.x_r0 is None:
            self.x_r0 = np.zeros(n)
        if self.x_r0 is not None:
            self.x_r0 = np.asarray(self.x_r0, dtype=float).reshape(-1)
            if self.x_r0.shape != (n,):
                raise DimensionMismatch("x_r0 does not match the plant")
        if self.unknown_input is not None and self.unknown_input.B_v.shape[0] != n:
            raise DimensionMismatch("B_v does not match the plant")
        self._prepare()

    # -- structure ---------------------------------------------------------

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def controllers(self):
        return [d for d in self.drivers if isinstance(d, ControllerNode)]

    @property
    def tracking(self):
        return any(c.mode == TRACKING for c in self.controllers)

    @property
    def has_reference(self):
        return self.x_r0 is not None

    @property
    def channel_widths(self):
        return [d.B.shape[1] for d in self.drivers]

    def _prepare(self):
        n, N = self.n, len(self.observers)
        widths = self.channel_widths
        offsets = np.concatenate([[0], np.cumsum(widths)]).astype(int)
        m = int(offsets[-1])
        self.B_all = np.hstack([d.B for d in self.drivers]) if self.drivers else np.zeros((n, 0))
        self.chan_slices = [slice(offsets[k], offsets[k + 1]) for k in range(len(self.drivers))]
        self.E_bar = np.stack([o.E_bar for o in self.observers])
        self.GC = np.stack([o.G_bar @ o.C for o in self.observers])
        self.FC = np.stack([o.F_bar @ o.C for o in self.observers])
        self.PU = np.stack([o.T_u @ o.T_u.T for o in self.observers])
        Bpad = np.zeros((N, n, m))
        for i, (o, chans) in enumerate(zip(self.observers, self.observer_channels)):
            col = 0
            for c in chans:
                w = widths[c]
                Bpad[i, :, self.chan_slices[c]] = o.B_bar[:, col:col + w]
                col += w
        self.B_bar_pad = Bpad
        st = [o.settings for o in self.observers]
        self.sigma = np.array([s.sigma for s in st])
        self.sigma_s = np.array([s.sigma_s for s in st])
        self.phi = np.array([s.phi for s in st])
        self.phi_s = np.array([s.phi_s for s in st])
        self.Lap = laplacian(self.graph)
        q = 0 if self.unknown_input is None else self.unknown_input.v0.size
        nr = n if self.has_reference else 0
        M = len(self.controllers)
        sizes = [("x", n), ("x_r", nr), ("v", q), ("z", N * n), ("gamma", N), ("gamma_s", N), ("beta", M)]
        self.layout, pos = {}, 0
        for key, size in sizes:
            self.layout[key] = slice(pos, pos + size)
            pos += size
        self.state_size = pos

    def initial_state(self):
        s = np.zeros(self.state_size)
        L = self.layout
        s[L["x"]] = self.x0
        if self.has_reference:
            s[L["x_r"]] = self.x_r0
        if self.unknown_input is not None:
            s[L["v"]] = self.unknown_input.v0
        states = [NodeState.initial(o) for o in self.observers]
        s[L["gamma"]] = [st.gamma for st in states]
        s[L["gamma_s"]] = [st.gamma_s for st in states]
        s[L["beta"]] = [c.beta0 for c in self.controllers]
        return s

    def unpack(self, s):
        L = self.layout
        out = {k: s[v] for k, v in L.items()}
        out["z"] = out["z"].reshape(len(self.observers), self.n)
        return out

    # -- preconditions -----------------------------------------------------

    def check_preconditions(self, tol=DEFAULT_TOL):
        """Connectivity, collective strong detectability and controller invariants.

        Returns a list of ``(assumption, passed, detail)``; raises nothing.
        """
        out = [("graph connected", is_connected(self.graph), f"{self.graph.node_count} nodes")]
        ok = collective_strong_detectability(self.graph, [o.T_d for o in self.observers], tol)
        out.append(("collective strong detectability", ok, "sum of Im T_id spans R^n" if ok else "spans fall short"))
        for c in self.controllers:
            if c.mode == SLIDING_ADAPTIVE:
                good = c.beta0 > 0 and c.sigma > 0 and c.phi > 0 and c.epsilon > 0
                out.append((f"controller {c.index} adaptive parameters positive", good, ""))
        if any(c.mode in (SLIDING_IDEAL, SLIDING_ADAPTIVE) for c in self.controllers):
            from .control import lyapunov_certificate

            P = self.controllers[0].P
            lam = lyapunov_certificate(self.A, self.controllers, P)
            out.append(("closed-loop Lyapunov certificate", lam < 0, f"max eigenvalue {lam:.3e}"))
        elif self.controllers:
            Acl = self.A + sum(c.B @ c.K for c in self.controllers)
            a = spectral_abscissa(Acl)
            out.append(("closed loop Hurwitz", a < 0, f"spectral abscissa {a:.3e}"))
        return out

    def require_preconditions(self, tol=DEFAULT_TOL):
        for name, ok, detail in self.check_preconditions(tol):
            if not ok:
                raise PreconditionViolated(f"{name} fails ({detail})", name)

    # -- dynamics ----------------------------------------------------------

    def estimates(self, x, Z):
        return Z + self.GC @ x

    def inputs(self, t, x, Xhat, beta, v=None):
        """Channel values and adaptive-gain derivatives of all controllers."""
        m = self.B_all.shape[1]
        u = np.zeros(m)
        beta_dot = np.zeros(len(self.controllers))
        k = 0
        for d, sl in zip(self.drivers, self.chan_slices):
            if not isinstance(d, ControllerNode):
                u[sl] = d.signal(t)
                continue
            xs = x if d.source == CENTRAL else Xhat[d.source]
            val = d.K @ xs
            if d.mode == TRACKING:
                val = val + d.reference(t)
            elif d.mode == SLIDING_IDEAL:
                w = d.B.T @ (d.P @ xs)
                nw = np.linalg.norm(w)
                if nw >= DEAD_ZONE:
                    val = val - beta[k] * (w / nw)
            elif d.mode == SLIDING_ADAPTIVE:
                w = d.B.T @ (d.P @ xs)
                nw = np.linalg.norm(w)
                if beta[k] * nw > d.epsilon and nw > DEAD_ZONE:
                    val = val - beta[k] * (w / nw)
                else:
                    val = val - beta[k] * (beta[k] / d.epsilon) * w
                beta_dot[k] = -d.sigma * beta[k] + d.phi * nw
            u[sl] = val
            k += 1
        return u, beta_dot

    def consensus(self, Xhat):
        """Projected disagreements ``T_u T_u.T d_i`` and their norms ``|eps_iu|``."""
        D = self.Lap @ Xhat
        Pd = np.einsum("ijk,ik->ij", self.PU, D)
        return Pd, np.linalg.norm(Pd, axis=1)

    def rhs(self, t, s):
        L = self.layout
        x = s[L["x"]]
        Z = s[L["z"]].reshape(len(self.observers), self.n)
        gamma, gamma_s, beta = s[L["gamma"]], s[L["gamma_s"]], s[L["beta"]]
        v = s[L["v"]]
        Xhat = self.estimates(x, Z)
        u, beta_dot = self.inputs(t, x, Xhat, beta, v)
        out = np.empty_like(s)
        dx = self.A @ x + self.B_all @ u
        if self.unknown_input is not None:
            dx = dx + self.unknown_input.B_v @ v
            out[L["v"]] = self.unknown_input.S @ v
        out[L["x"]] = dx
        if self.has_reference:
            xr = s[L["x_r"]]
            dxr = self.A @ xr
            for c in self.controllers:
                r = c.reference(t) if c.reference is not None else 0.0
                dxr = dxr + c.B @ (c.K @ xr + r)
            out[L["x_r"]] = dxr
        Pd, nrm = self.consensus(Xhat)
        safe = np.where(nrm > DEAD_ZONE, nrm, 1.0)
        dirn = np.where((nrm > DEAD_ZONE)[:, None], Pd / safe[:, None], 0.0)
        Zdot = (
            np.einsum("ijk,ik->ij", self.E_bar, Z)
            + self.FC @ x
            + self.B_bar_pad @ u
            - gamma[:, None] * Pd
            - gamma_s[:, None] * dirn
        )
        out[L["z"]] = Zdot.reshape(-1)
        out[L["gamma"]] = -self.sigma * gamma + self.phi * nrm**2
        out[L["gamma_s"]] = -self.sigma_s * gamma_s + self.phi_s * nrm
        out[L["beta"]] = beta_dot
        return out

    def node_rhs_reference(self, t, s):
        """Observer derivatives computed node by node with the unbatched API."""
        p = self.unpack(s)
        x = p["x"]
        Xhat = self.estimates(x, p["z"])
        u, _ = self.inputs(t, x, Xhat, p["beta"], p["v"])
        Adj = self.graph.adjacency
        out = []
        for i, (o, chans) in enumerate(zip(self.observers, self.observer_channels)):
            ui = np.concatenate([u[self.chan_slices[c]] for c in chans]) if chans else np.zeros(0)
            nb = [(Adj[i, j], Xhat[j]) for j in self.graph.neighbors(i)]
            st = NodeState(p["z"][i], p["gamma"][i], p["gamma_s"][i])
            out.append(observer_rhs(o, st, o.C @ x, ui, nb))
        return out


@dataclass
class TrajectoryRecord:
    """Sampled closed-loop quantities; row ``k`` belongs to time ``t[k]``.

    ``u_variation`` holds the cumulative total variation of each input
    component, accumulated over every integrator step (not only samples).
    """

    t: np.ndarray
    norm_x: np.ndarray
    err_r: np.ndarray
    err: np.ndarray
    eps_u: np.ndarray
    eps_d: np.ndarray
    gamma: np.ndarray
    gamma_s: np.ndarray
    beta: np.ndarray
    u: np.ndarray
    u_variation: np.ndarray
    eps_d0: np.ndarray = None
    final_state: np.ndarray = None
    step: float = None
    name: str = ""

    @property
    def samples(self):
        return self.t.size

    @property
    def node_count(self):
        return self.err.shape[1]

    @classmethod
    def empty(cls, node_count=0, controller_count=0, input_width=0):
        z = lambda *s: np.zeros((0,) + s)  # noqa: E731
        return cls(
            z(), z(), z(), z(node_count), z(node_count), z(node_count), z(node_count), z(node_count),
            z(controller_count), z(input_width), z(input_width),
        )

    def window(self, t0):
        """Boolean mask of samples with ``t >= t0`` (small slack for rounding)."""
        return self.t >= t0 - 1e-9


def _snapshot(loop, t, s, u):
    p = loop.unpack(s)
    x = p["x"]
    Xhat = loop.estimates(x, p["z"])
    E = Xhat - x
    _, eps_u = loop.consensus(Xhat)
    eps_d = np.array([np.linalg.norm(o.T_d.T @ e) for o, e in zip(loop.observers, E)])
    err_r = np.linalg.norm(x - p["x_r"]) if loop.has_reference else np.nan
    return (t, np.linalg.norm(x), err_r, np.linalg.norm(E, axis=1), eps_u, eps_d,
            p["gamma"].copy(), p["gamma_s"].copy(), p["beta"].copy(), u.copy())


def run(loop, horizon, step=1e-3, stride=1, check=True):
    """Integrate `loop` over ``[0, horizon]`` with fixed step RK4.

    Parameters
    ----------
    loop : ClosedLoop
    horizon : float
        Final time; must be a whole number of steps.
    step : float
    stride : int
        Record every `stride`-th step; must divide the step count.
    check : bool
        Enforce the precondition gates before integrating.

    Raises
    ------
    Diverged
        If any state component exceeds ``DIVERGENCE_LIMIT`` or stops being finite.
    PreconditionViolated
    """
    if not step > 0:
        raise ValueError("step must be positive")
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    steps = int(round(horizon / step))
    if abs(steps * step - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError(f"horizon {horizon} is not a multiple of the step {step}")
    stride = int(stride)
    if stride < 1 or (steps and steps % stride):
        raise ValueError(f"stride {stride} does not divide the {steps} steps")
    if check:
        loop.require_preconditions()
    s = loop.initial_state()
    L = loop.layout

    def controls(t, s):
        p = loop.unpack(s)
        return loop.inputs(t, p["x"], loop.estimates(p["x"], p["z"]), p["beta"], p["v"])[0]

    rows = []
    u_prev = controls(0.0, s)
    tv = np.zeros_like(u_prev)
    tv_rows = []
    rows.append(_snapshot(loop, 0.0, s, u_prev))
    tv_rows.append(tv.copy())
    for k in range(steps):
        t = k * step
        s = rk4_step(loop.rhs, t, s, step)
        if not np.all(np.isfinite(s)) or np.max(np.abs(s)) > DIVERGENCE_LIMIT:
            raise Diverged(f"{loop.name}: state left the bound {DIVERGENCE_LIMIT:g} at t = {t + step:.6g}", t + step)
        t1 = (k + 1) * step
        u = controls(t1, s)
        tv += np.abs(u - u_prev)
        u_prev = u
        if (k + 1) % stride == 0:
            rows.append(_snapshot(loop, t1, s, u))
            tv_rows.append(tv.copy())
    cols = list(zip(*rows))
    s0 = loop.initial_state()
    p0 = loop.unpack(s0)
    e0 = loop.estimates(p0["x"], p0["z"]) - p0["x"]
    eps_d0 = np.array([np.linalg.norm(o.T_d.T @ e) for o, e in zip(loop.observers, e0)])
    return TrajectoryRecord(
        t=np.array(cols[0]),
        norm_x=np.array(cols[1]),
        err_r=np.array(cols[2]),
        err=np.array(cols[3]),
        eps_u=np.array(cols[4]),
        eps_d=np.array(cols[5]),
        gamma=np.array(cols[6]),
        gamma_s=np.array(cols[7]),
        beta=np.array(cols[8]).reshape(len(rows), -1),
        u=np.array(cols[9]).reshape(len(rows), -1),
        u_variation=np.array(tv_rows).reshape(len(rows), -1),
        eps_d0=eps_d0,
        final_state=s,
        step=step,
        name=loop.name,
    )


def settling_time(t, y, threshold):
    """First time after which `y` stays at or below `threshold`.

    Linear interpolation between the last sample above the threshold and the
    next one; ``0.0`` if `y` never exceeds it and ``inf`` if the final
    sample is still above it.
    """
    t, y = np.asarray(t, float), np.asarray(y, float)
    if y.size == 0:
        return 0.0
    above = np.flatnonzero(y > threshold)
    if above.size == 0:
        return 0.0
    k = above[-1]
    if k == y.size - 1:
        return np.inf
    y0, y1 = y[k], y[k + 1]
    return float(t[k] + (t[k + 1] - t[k]) * (y0 - threshold) / (y0 - y1))


def _max_or_zero(a, axis=0):
    return np.max(a, axis=axis) if a.size and a.shape[axis] else np.zeros(a.shape[1:] if a.ndim > 1 else ())


def metrics(record, threshold=1e-2, tail=0.2):
    """Summary numbers of a record.

    Returns a dict with final and maximal norms, settling times of the
    estimation / tracking errors to `threshold`, gain suprema, and the
    chattering index (total variation of each input component per unit time,
    over the whole run and over the trailing `tail` fraction).
    """
    r = record
    out = {"samples": int(r.samples)}
    if r.samples == 0:
        return {**out, "final_norm_x": 0.0, "max_norm_x": 0.0, "final_err": [], "max_err": [],
                "settling_err": [], "gamma_sup": [], "gamma_s_sup": [], "beta_sup": [], "chattering": []}
    T = r.t[-1] - r.t[0]
    out["horizon"] = float(r.t[-1])
    out["final_norm_x"] = float(r.norm_x[-1])
    out["max_norm_x"] = float(np.max(r.norm_x))
    out["final_err"] = r.err[-1].tolist()
    out["max_err"] = _max_or_zero(r.err).tolist()
    out["settling_err"] = [settling_time(r.t, r.err[:, i], threshold) for i in range(r.node_count)]
    if np.all(np.isfinite(r.err_r)):
        out["final_err_r"] = float(r.err_r[-1])
        out["settling_err_r"] = settling_time(r.t, r.err_r, threshold)
    out["gamma_sup"] = _max_or_zero(r.gamma).tolist()
    out["gamma_s_sup"] = _max_or_zero(r.gamma_s).tolist()
    out["beta_sup"] = _max_or_zero(r.beta).tolist()
    if T > 0:
        out["chattering"] = (r.u_variation[-1] / T).tolist()
        mask = r.window(r.t[-1] - tail * T)
        k0 = np.flatnonzero(mask)[0]
        dt = r.t[-1] - r.t[k0]
        out["chattering_tail"] = ((r.u_variation[-1] - r.u_variation[k0]) / dt).tolist() if dt > 0 else []
    else:
        out["chattering"] = np.zeros(r.u.shape[1]).tolist()
        out["chattering_tail"] = []
    return out


def structural_bound_ratio(record, loop, slack=1e-6):
    """Worst factor by which ``|T_id.T e_i(t)|`` exceeds its exponential bound.

    Per node, the smallest ``c`` with ``|T_id.T e_i(t)| <= c |T_id.T e_i(0)|
    exp(alpha_i t) + slack`` on every sample, ``alpha_i`` being the spectral
    abscissa of ``E_i``.  When ``E_i = 0`` (or the initial value vanishes)
    the functional error must stay within `slack`; the ratio is then 0 or inf.
    Values <= 2 pass the factor-two test.
    """
    ratios = []
    for i, o in enumerate(loop.observers):
        q = o.quadruplet
        excess = np.maximum(record.eps_d[:, i] - slack, 0.0)
        if not excess.size:
            ratios.append(0.0)
            continue
        if q.e_mode == "zero" or q.E.size == 0 or record.eps_d0[i] == 0:
            ratios.append(0.0 if np.all(excess == 0) else np.inf)
            continue
        base = record.eps_d0[i] * np.exp(spectral_abscissa(q.E) * record.t)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(excess > 0, excess / base, 0.0)
        ratios.append(float(np.max(r)))
    return ratios
