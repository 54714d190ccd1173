"""MPCC tracking with a disturbance observer.

Inputs are split as v = [f_n, f_t, psi_dot_plus, psi_dot_minus]. The mode
complementarity is handled by a penalty-augmented SQP: dynamics are linearized
about the previous iterate and the bilinear complementarity products enter the
cost through their gradient, plus a proximal term. After the SQP loop the
contact mode of every step is read off the solution and fixed, and one more QP
with the mode held as equality constraints makes the products exactly zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import logging

import numpy as np
import osqp
import scipy.sparse as sp

from .dynamics import PusherInput, SliderModel, SliderState, _rate, face_frame, input_matrix
from .geom2d import rotation_matrix, wrap_angle

log = logging.getLogger(__name__)

SPLIT = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, -1.0]])
MODE_THRESHOLD = 1e-3  # rad/s, |psi_dot| above this counts as sliding


class SolverDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 30
    tau_mpc: float = 0.04
    Q: np.ndarray = field(default_factory=lambda: np.diag([50.0, 50.0, 10.0, 0.1]))
    Q_f: np.ndarray | None = None
    R_u: np.ndarray = field(default_factory=lambda: np.diag([1.0, 1.0, 0.01, 0.01]))
    kappa_d: float = 5.0
    eps: float = 1e-4
    max_sqp_iters: int = 5
    # controller-side input limits
    f_bar: float = 0.5
    psi_dot_bar: float = 3.0
    penalty: float = 1.0
    prox: float = 1e-3
    observer: bool = True

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.eps <= 0 or self.kappa_d < 0 or self.tau_mpc <= 0:
            raise ValueError("eps and tau_mpc must be positive, kappa_d nonnegative")
        Q = np.asarray(self.Q, dtype=float)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "Q_f", 10.0 * Q if self.Q_f is None else np.asarray(self.Q_f, dtype=float))
        object.__setattr__(self, "R_u", np.asarray(self.R_u, dtype=float))
        for name in ("Q", "Q_f"):
            if np.min(np.linalg.eigvalsh(getattr(self, name))) < -1e-12:
                raise ValueError(f"{name} must be positive semidefinite")
        if np.min(np.linalg.eigvalsh(self.R_u)) <= 0:
            raise ValueError("R_u must be positive definite")


@dataclass(frozen=True)
class MpcInput:
    f_n: float
    f_t: float
    psi_dot_plus: float = 0.0
    psi_dot_minus: float = 0.0

    @property
    def psi_dot(self) -> float:
        return self.psi_dot_plus - self.psi_dot_minus

    def as_array(self) -> np.ndarray:
        return np.array([self.f_n, self.f_t, self.psi_dot_plus, self.psi_dot_minus])

    @classmethod
    def from_array(cls, a) -> "MpcInput":
        return cls(*(float(v) for v in a))

    @classmethod
    def from_pusher(cls, u: PusherInput) -> "MpcInput":
        return cls(u.f_n, u.f_t, max(u.psi_dot, 0.0), max(-u.psi_dot, 0.0))

    def pusher(self) -> PusherInput:
        return PusherInput(max(self.f_n, 0.0), self.f_t, self.psi_dot)

    def complementarity(self, mu: float) -> np.ndarray:
        """Products that must vanish. The tangent points toward decreasing psi_c, so
        psi_dot_plus pairs with the f_t = -mu f_n cone edge."""
        return complementarity(self.as_array()[None], mu)[0]


def complementarity(V: np.ndarray, mu: float) -> np.ndarray:
    fn, ft, pp, pm = V[:, 0], V[:, 1], V[:, 2], V[:, 3]
    return np.stack([pp * (mu * fn + ft), pm * (mu * fn - ft), pp * pm], axis=1)


@dataclass(frozen=True)
class DisturbanceState:
    d_hat: np.ndarray = field(default_factory=lambda: np.zeros(4))

    def __post_init__(self):
        d = np.array(self.d_hat, dtype=float).reshape(4)
        d[3] = 0.0
        object.__setattr__(self, "d_hat", d)


def state_residual(x_obs: SliderState, x_pred: SliderState) -> np.ndarray:
    r = x_obs.as_array() - x_pred.as_array()
    r[2] = wrap_angle(r[2])
    r[3] = wrap_angle(r[3])
    return r


def observer_update(d_hat, x_obs: SliderState, x_pred: SliderState, kappa_d: float, tau_mpc: float) -> DisturbanceState:
    """One observer step.

    x_pred is the one-step prediction from the previous observation, so the residual
    divided by tau_mpc is the rate mismatch d - d_hat; d_hat moves toward it at rate kappa_d.
    """
    d = d_hat.d_hat if isinstance(d_hat, DisturbanceState) else np.asarray(d_hat, dtype=float)
    r = state_residual(x_obs, x_pred)
    return DisturbanceState(d + tau_mpc * kappa_d * (r / tau_mpc))


def controller_model(model: SliderModel, cfg: MpcConfig) -> SliderModel:
    return replace(model, f_bar=cfg.f_bar, psi_dot_bar=cfg.psi_dot_bar)


@dataclass(frozen=True)
class ReferenceWindow:
    """N+1 reference states, N split reference inputs, the face used in each step
    and, where a step starts on a new face, the psi_c the pusher is re-placed at."""

    states: np.ndarray
    inputs: np.ndarray
    faces: np.ndarray
    resets: np.ndarray
    # per-step durations; None means tau_mpc throughout
    dts: np.ndarray | None = None

    @classmethod
    def from_states(cls, model: SliderModel, states, tau: float, face: int | None = None) -> "ReferenceWindow":
        X = np.array([s.as_array() if isinstance(s, SliderState) else s for s in states], dtype=float)
        if face is None:
            face = model.face_of(X[0, 3])
        N = len(X) - 1
        faces = np.full(N, face, dtype=int)
        return cls(X, feedforward(model, X, faces, tau), faces, np.full(N, np.nan))


def feedforward(model: SliderModel, X: np.ndarray, faces, tau: float) -> np.ndarray:
    """Least-squares inputs reproducing consecutive reference states, in split form."""
    out = np.zeros((len(X) - 1, 4))
    for k in range(len(X) - 1):
        B = input_matrix(model, X[k, 2], model.unwrap_on_face(faces[k], X[k, 3]), faces[k])
        dx = X[k + 1] - X[k]
        dx[2] = wrap_angle(dx[2])
        dx[3] = wrap_angle(dx[3])
        u = np.linalg.lstsq(B, dx / tau, rcond=None)[0]
        out[k] = [max(u[0], 0.0), u[1], max(u[2], 0.0), max(-u[2], 0.0)]
    return out


@dataclass
class MpcSolution:
    u0: MpcInput
    predicted: list
    inputs: np.ndarray
    states: np.ndarray
    iterations: int
    diverged: bool
    complementarity: float
    cost: float

    def __iter__(self):
        yield self.u0
        yield self.predicted


def _linearize(model, x, v, face):
    """f(x, v) and its Jacobians in x (4x4) and v (4x4) for a fixed face."""
    theta, psi = x[2], x[3]
    u = SPLIT @ v
    p, n, t = face_frame(model, face, psi)
    J = np.array([[n[0], n[1], p[0] * n[1] - p[1] * n[0]], [t[0], t[1], p[0] * t[1] - p[1] * t[0]]])
    R = rotation_matrix(theta)
    F = J.T @ u[:2]
    f = np.zeros(4)
    f[:3] = R @ model.A @ F
    f[3] = u[2]
    Ax = np.zeros((4, 4))
    dR = np.array([[-math.sin(theta), -math.cos(theta), 0.0], [math.cos(theta), -math.sin(theta), 0.0], [0, 0, 0]])
    Ax[:3, 2] = dR @ model.A @ F
    # the contact point slides along the face line as psi changes
    h = 1e-7
    p2 = face_frame(model, face, psi + h)[0]
    dp = (p2 - face_frame(model, face, psi - h)[0]) / (2 * h)
    dtau = (dp[0] * n[1] - dp[1] * n[0]) * u[0] + (dp[0] * t[1] - dp[1] * t[0]) * u[1]
    Ax[:3, 3] = R @ model.A[:, 2] * dtau
    Bv = np.zeros((4, 4))
    Bv[:3, :] = R @ model.A @ J.T @ SPLIT[:2]
    Bv[3] = SPLIT[2]
    return f, Ax, Bv


def _euler_rollout(model, x0, V, faces, resets, d, taus):
    taus = np.broadcast_to(np.asarray(taus, dtype=float), (len(V),))
    X = np.zeros((len(V) + 1, 4))
    X[0] = x0
    for k in range(len(V)):
        x = X[k].copy()
        if not np.isnan(resets[k]):
            x[3] = resets[k]
        X[k + 1] = x + taus[k] * (_rate(model, x, SPLIT @ V[k], faces[k]) + d)
    return X


class _QpBuilder:
    def __init__(self, model: SliderModel, cfg: MpcConfig, psi_bounds):
        self.model, self.cfg = model, cfg
        N = cfg.horizon
        self.N = N
        self.nx = 4 * N
        self.nz = 8 * N
        mu = model.mu_p
        # constant rows: input box, friction cone, psi bounds
        rows, cols, vals = [], [], []
        r = 0
        lo, hi = [], []
        for k in range(N):
            base = self.nx + 4 * k
            for i, (l, u) in enumerate([(0.0, cfg.f_bar), (-np.inf, np.inf), (0.0, cfg.psi_dot_bar), (0.0, cfg.psi_dot_bar)]):
                if i == 1:
                    continue
                rows.append(r), cols.append(base + i), vals.append(1.0)
                lo.append(l), hi.append(u)
                r += 1
            # mu f_n + f_t >= 0 and mu f_n - f_t >= 0
            for s in (1.0, -1.0):
                rows += [r, r]
                cols += [base, base + 1]
                vals += [mu, s]
                lo.append(0.0), hi.append(np.inf)
                r += 1
        for k in range(N):
            rows.append(r), cols.append(4 * k + 3), vals.append(1.0)
            lo.append(psi_bounds[k][0]), hi.append(psi_bounds[k][1])
            r += 1
        self.C = sp.csc_matrix((vals, (rows, cols)), shape=(r, self.nz))
        self.c_lo = np.array(lo)
        self.c_hi = np.array(hi)

    def solve(self, x0, Xbar, Vbar, ref: ReferenceWindow, d, grad_pen, fixed_modes=None):
        cfg, model, N = self.cfg, self.model, self.N
        taus = _durations(ref, cfg)
        # dynamics: x_{k+1} - (I + tau A_k) x_k - tau B_k v_k = tau (f_k - A_k xbar_k - B_k vbar_k + d)
        blocks_r, blocks_c, blocks_v = [], [], []
        beq = np.zeros(4 * N)
        eye = np.eye(4)
        for k in range(N):
            tau = taus[k]
            xb = Xbar[k].copy()
            reset = not np.isnan(ref.resets[k])
            if reset:
                xb[3] = ref.resets[k]
            f, Ax, Bv = _linearize(model, xb, Vbar[k], ref.faces[k])
            Phi = eye + tau * Ax
            if reset:
                # psi is re-placed at the start of this step, so x_k[3] does not carry over
                Phi[:, 3] = 0.0
                Phi[3, 3] = 0.0
            rhs = tau * (f - Ax @ xb - Bv @ Vbar[k] + d)
            if reset:
                rhs += (eye + tau * Ax)[:, 3] * ref.resets[k]
            r0 = 4 * k
            rr, cc = np.meshgrid(np.arange(4), np.arange(4), indexing="ij")
            blocks_r.append(r0 + np.arange(4)), blocks_c.append(4 * k + np.arange(4)), blocks_v.append(np.ones(4))
            if k == 0:
                x0k = x0.copy()
                beq[r0:r0 + 4] = rhs + Phi @ x0k
            else:
                blocks_r.append((r0 + rr).ravel()), blocks_c.append((4 * (k - 1) + cc).ravel())
                blocks_v.append((-Phi).ravel())
                beq[r0:r0 + 4] = rhs
            blocks_r.append((r0 + rr).ravel()), blocks_c.append((self.nx + 4 * k + cc).ravel())
            blocks_v.append((-tau * Bv).ravel())
        E = sp.csc_matrix((np.concatenate(blocks_v), (np.concatenate(blocks_r), np.concatenate(blocks_c))),
                          shape=(4 * N, self.nz))
        A = sp.vstack([E, self.C], format="csc")
        lo = np.concatenate([beq, self.c_lo])
        hi = np.concatenate([beq, self.c_hi])
        if fixed_modes is not None:
            lo, hi = self._fix_modes(lo, hi, fixed_modes)
        # cost
        Pd = []
        q = np.zeros(self.nz)
        for k in range(1, N + 1):
            W = cfg.Q_f if k == N else cfg.Q
            Pd.append(2 * W)
            q[4 * (k - 1):4 * k] = -2 * W @ ref.states[k]
        for k in range(N):
            Pd.append(2 * cfg.R_u + 2 * cfg.prox * np.eye(4))
            s = self.nx + 4 * k
            q[s:s + 4] = -2 * cfg.R_u @ ref.inputs[k] - 2 * cfg.prox * Vbar[k] + cfg.penalty * grad_pen[k]
        P = sp.block_diag(Pd, format="csc")
        solver = osqp.OSQP()
        solver.setup(P=sp.triu(P, format="csc"), q=q, A=A, l=lo, u=hi, verbose=False, eps_abs=1e-7, eps_rel=1e-7,
                     max_iter=20000, polishing=True, warm_starting=True)
        z0 = np.concatenate([Xbar[1:].ravel(), Vbar.ravel()])
        solver.warm_start(x=z0)
        res = solver.solve(raise_error=False)
        ok = res.info.status_val in (1, 2)  # solved, solved inaccurate
        if res.info.status_val == 7 and res.x is not None and res.info.prim_res < 1e-6:
            ok = True  # iteration cap hit on an already feasible iterate
        if not ok:
            raise SolverDiverged(f"{res.info.status} (fixed modes: {fixed_modes is not None})")
        z = res.x
        return z[:self.nx].reshape(N, 4), z[self.nx:].reshape(N, 4), float(res.info.obj_val)

    def _fix_modes(self, lo, hi, modes):
        lo, hi = lo.copy(), hi.copy()
        off = 4 * self.N
        for k, m in enumerate(modes):
            base = off + 5 * k  # rows: f_n, pp, pm, cone+, cone-
            if m == 0:
                hi[base + 1] = hi[base + 2] = 0.0
            elif m > 0:
                hi[base + 2] = 0.0
                hi[base + 3] = 0.0
            else:
                hi[base + 1] = 0.0
                hi[base + 4] = 0.0
        return lo, hi


def _penalty_gradient(V, mu):
    fn, ft, pp, pm = V[:, 0], V[:, 1], V[:, 2], V[:, 3]
    return np.stack([mu * (pp + pm), pp - pm, mu * fn + ft + pm, mu * fn - ft + pp], axis=1)


def _align(ref: ReferenceWindow, model: SliderModel, x_now: np.ndarray) -> ReferenceWindow:
    """Unwrap reference angles next to the current heading and onto each step's face."""
    X = ref.states.copy()
    th = x_now[2]
    for k in range(len(X)):
        th = th + wrap_angle(X[k, 2] - th)
        X[k, 2] = th
    for k in range(len(X)):
        f = ref.faces[min(k, len(ref.faces) - 1)] if k == 0 else ref.faces[k - 1]
        X[k, 3] = model.unwrap_on_face(f, X[k, 3])
    resets = ref.resets.copy()
    for k in range(len(resets)):
        if not np.isnan(resets[k]):
            resets[k] = model.unwrap_on_face(ref.faces[k], resets[k])
    return replace(ref, states=X, resets=resets)


def _durations(ref: ReferenceWindow, cfg: MpcConfig) -> np.ndarray:
    return np.full(cfg.horizon, cfg.tau_mpc) if ref.dts is None else np.asarray(ref.dts, dtype=float)


def solve_mpc(model: SliderModel, x_now: SliderState, d_hat, reference, cfg: MpcConfig | None = None,
              warm: MpcSolution | None = None) -> MpcSolution:
    """One receding-horizon solve. model should carry the controller's limits (see controller_model)."""
    cfg = cfg or MpcConfig()
    N = cfg.horizon
    d = d_hat.d_hat if isinstance(d_hat, DisturbanceState) else np.asarray(d_hat, dtype=float)
    if not isinstance(reference, ReferenceWindow):
        reference = ReferenceWindow.from_states(model, reference, cfg.tau_mpc)
    if len(reference.states) != N + 1:
        raise ValueError(f"reference window must hold {N + 1} states")
    x0 = x_now.as_array()
    face0 = model.face_of(x_now.psi_c)
    if reference.faces[0] != face0:
        # keep the plant's face until the first scheduled re-placement
        faces = reference.faces.copy()
        for k in range(len(faces)):
            if k and not np.isnan(reference.resets[k]):
                break
            faces[k] = face0
        reference = replace(reference, faces=faces)
    x0[3] = model.unwrap_on_face(face0, x0[3])
    ref = _align(reference, model, x0)
    bounds = []
    for k in range(N):
        lo, hi, _ = model.face_interval(ref.faces[k])
        if k == 0 or ref.faces[k] == ref.faces[0] and np.all(np.isnan(ref.resets[:k + 1])):
            lo, hi = min(lo, x0[3]), max(hi, x0[3])
        bounds.append((lo, hi))
    qp = _QpBuilder(model, cfg, bounds)
    if warm is not None and len(warm.inputs) == N:
        Vbar = np.vstack([warm.inputs[1:], warm.inputs[-1:]])
    else:
        Vbar = ref.inputs.copy()
    Vbar = np.clip(Vbar, [0, -np.inf, 0, 0], [cfg.f_bar, np.inf, cfg.psi_dot_bar, cfg.psi_dot_bar])
    Xbar = _euler_rollout(model, x0, Vbar, ref.faces, ref.resets, d, _durations(ref, cfg))
    mu = model.mu_p
    iters = 0
    try:
        for iters in range(1, cfg.max_sqp_iters + 1):
            X, V, cost = qp.solve(x0, Xbar, Vbar, ref, d, _penalty_gradient(Vbar, mu))
            step = max(np.max(np.abs(V - Vbar)), np.max(np.abs(X - Xbar[1:])))
            Vbar = V
            Xbar = np.vstack([x0, X])
            if step < 1e-6:
                break
        psid = Vbar[:, 2] - Vbar[:, 3]
        modes = np.where(psid > MODE_THRESHOLD, 1, np.where(psid < -MODE_THRESHOLD, -1, 0))
        for _ in range(2):
            X, V, cost = qp.solve(x0, Xbar, Vbar, ref, d, np.zeros((N, 4)), fixed_modes=modes)
            Vbar = V
            Xbar = np.vstack([x0, X])
    except SolverDiverged as exc:
        log.debug("MPC solve failed: %s", exc)
        fallback = warm.inputs[1] if warm is not None and len(warm.inputs) > 1 else np.zeros(4)
        Xf = _euler_rollout(model, x0, np.tile(fallback, (N, 1)), ref.faces, ref.resets, d, _durations(ref, cfg))
        return MpcSolution(MpcInput.from_array(fallback), [SliderState.from_array(x) for x in Xf],
                           np.tile(fallback, (N, 1)), Xf, iters, True, math.nan, math.nan)
    V = np.clip(Vbar, [0, -np.inf, 0, 0], [cfg.f_bar, np.inf, cfg.psi_dot_bar, cfg.psi_dot_bar])
    Xp = _euler_rollout(model, x0, V, ref.faces, ref.resets, d, _durations(ref, cfg))
    comp = float(np.max(complementarity(V, mu)))
    return MpcSolution(MpcInput.from_array(V[0]), [SliderState.from_array(x) for x in Xp], V, Xp, iters,
                       comp > cfg.eps, comp, cost)


class PlanReference:
    """Time-indexed reference built from a plan sampled every tau_lqr.

    Poses are interpolated linearly. A face switch recorded at step k re-places the
    pusher at time k * tau_lqr; psi_c is interpolated along each step's own face.
    """

    def __init__(self, model: SliderModel, states: np.ndarray, controls, face_switches=(), tau_lqr: float = 0.01):
        X = np.array(states, dtype=float)
        X[:, 2] = np.unwrap(X[:, 2])
        self.model = model
        self.tau_lqr = tau_lqr
        self.T = len(X) - 1
        start = X[:-1].copy() if self.T else X.copy()
        self.switches = tuple((int(k), float(p)) for k, p in face_switches)
        for k, p in self.switches:
            start[k, 3] = p
        self.start, self.end = start, X[1:] if self.T else X.copy()
        self.faces = np.array([model.face_of(s[3]) for s in start], dtype=int)
        for k in range(len(start)):
            self.start[k, 3] = model.unwrap_on_face(self.faces[k], start[k, 3])
            self.end[k, 3] = model.unwrap_on_face(self.faces[k], self.end[k, 3])
        self.U = np.array([u.as_array() for u in controls]) if len(controls) else np.zeros((0, 3))
        self.duration = self.T * tau_lqr

    @classmethod
    def from_plan(cls, model: SliderModel, plan, tau_lqr: float | None = None) -> "PlanReference":
        tau_lqr = tau_lqr or plan.stats.get("tau_lqr", 0.01)
        return cls(model, plan.states, plan.controls, plan.face_switches, tau_lqr)

    def _step(self, t: float) -> tuple[int, float]:
        s = t / self.tau_lqr
        k = int(math.floor(s + 1e-9))
        if k >= self.T:
            return self.T, 0.0
        return max(k, 0), min(max(s - k, 0.0), 1.0)

    def face(self, t: float) -> int:
        k, _ = self._step(t)
        return int(self.faces[min(k, len(self.faces) - 1)])

    def state(self, t: float) -> np.ndarray:
        k, a = self._step(t)
        if self.T == 0:
            return self.start[0].copy()
        if k >= self.T:
            return self.end[-1].copy()
        return (1 - a) * self.start[k] + a * self.end[k]

    def switches_between(self, t0: float, t1: float):
        """Pusher re-placements (time, psi_c) with t0 < time <= t1."""
        eps = 1e-9
        return [(k * self.tau_lqr, p) for k, p in self.switches if t0 + eps < k * self.tau_lqr <= t1 + eps]

    def next_switch(self, t: float) -> float:
        later = [k * self.tau_lqr for k, _ in self.switches if k * self.tau_lqr > t + 1e-9]
        return min(later) if later else math.inf

    def input(self, t: float, tau: float, face: int | None = None) -> np.ndarray:
        """Mean plan input over [t, t + tau), split form; with a face, only plan steps on it count."""
        if not len(self.U):
            return np.zeros(4)
        k0 = max(int(math.floor(t / self.tau_lqr + 1e-9)), 0)
        k1 = min(max(k0 + 1, int(math.ceil((t + tau) / self.tau_lqr - 1e-9))), len(self.U))
        ks = np.arange(k0, k1)
        if face is not None:
            ks = ks[self.faces[ks] == face]
        if not len(ks):
            return np.zeros(4)
        u = self.U[ks].mean(axis=0)
        return np.array([u[0], u[1], max(u[2], 0.0), max(-u[2], 0.0)])

    def face_at(self, t: float) -> int:
        """Face the pusher is on at time t once due re-placements are applied."""
        sw = self.switches_between(-math.inf, t)
        return self.model.face_of(sw[-1][1]) if sw else int(self.faces[0])

    def window(self, t: float, N: int, tau: float, first: float | None = None) -> ReferenceWindow:
        """Reference for a solve at time t. The first step lasts `first` (default tau); a
        re-placement at t + first lands exactly there, later ones on the nearest step boundary."""
        first = tau if first is None else first
        dts = np.full(N, tau)
        dts[0] = first
        ts = t + np.concatenate([[0.0], np.cumsum(dts)])
        X = np.array([self.state(ti) for ti in ts])
        faces = np.empty(N, dtype=int)
        faces[0] = self.face_at(t)
        resets = np.full(N, np.nan)
        for ts_k, p in self.switches_between(t, ts[-1]):
            i = 1 if abs(ts_k - ts[1]) < 1e-9 else int(np.clip(round((ts_k - ts[1]) / tau) + 1, 1, N))
            if i < N:
                resets[i] = p
        for i in range(1, N):
            faces[i] = faces[i - 1] if np.isnan(resets[i]) else self.model.face_of(resets[i])
        # reference psi_c follows the controller's face schedule
        psi = self.model.face_interval(faces[0])[2]
        for i in range(N + 1):
            f = faces[0] if i == 0 else faces[i - 1]
            if self.face(ts[i]) == f:
                psi = X[i, 3]
            X[i, 3] = psi
        inputs = np.array([self.input(ti, dt, f) for ti, dt, f in zip(ts[:-1], dts, faces)])
        return ReferenceWindow(X, inputs, faces, resets, dts)


@dataclass
class TrackLog:
    times: list = field(default_factory=list)
    x_obs: list = field(default_factory=list)
    x_ref: list = field(default_factory=list)
    u: list = field(default_factory=list)
    d_hat: list = field(default_factory=list)
    events: list = field(default_factory=list)
    dts: list = field(default_factory=list)
    diverged: int = 0
    fault: str = ""

    @property
    def error(self) -> np.ndarray:
        """Per-step position error (x, y) of the plant against the reference."""
        if not self.times:
            return np.zeros((0, 2))
        return np.array(self.x_obs)[:, :2] - np.array(self.x_ref)[:, :2]

    @property
    def error_norm(self) -> np.ndarray:
        return np.linalg.norm(self.error, axis=1)

    def integrated_error(self) -> float:
        """Time integral of the position error norm (m s)."""
        return float(np.sum(self.error_norm * np.asarray(self.dts)))

    def rows(self):
        for t, x, r, u, d, ev in zip(self.times, self.x_obs, self.x_ref, self.u, self.d_hat, self.events):
            e = x[:2] - r[:2]
            yield [t, *x, u.f_n, u.f_t, u.psi_dot, d[0], d[1], d[2], e[0], e[1], "|".join(ev)]

    def to_csv(self, path) -> None:
        from .simulator import write_log

        write_log(path, self.rows())


def track(model: SliderModel, plan, plant, cfg: MpcConfig | None = None, disturbance_schedule=None,
          settle: float = 1.0, reference: PlanReference | None = None) -> TrackLog:
    """Closed-loop tracking of a plan on a plant (see simulator.Plant).

    Each tick: apply due pusher re-placements, observe, update the observer against
    the last one-step prediction, solve the MPC, apply its first input.
    """
    cfg = cfg or MpcConfig()
    if not plan.success:
        raise ValueError("cannot track a failed plan")
    if disturbance_schedule is not None:
        plant.schedule = disturbance_schedule
    ref = reference or PlanReference.from_plan(model, plan)
    cmodel = controller_model(model, cfg)
    tau = cfg.tau_mpc
    t_end = ref.duration + settle
    log = TrackLog()
    d = DisturbanceState()
    x_pred = None
    warm = None
    t = 0.0
    t_prev = -math.inf
    while t < t_end - 1e-9:
        events = []
        sw = ref.switches_between(t_prev, t)
        if sw:
            plant.replace_pusher(sw[-1][1])
            events.append("switch")
        # ticks are shortened so a re-placement falls exactly on one
        dt = min(tau, ref.next_switch(t) - t)
        x_obs = plant.world.slider
        if x_pred is not None and cfg.observer:
            d = observer_update(d, x_obs, x_pred, cfg.kappa_d, dt_prev)
        sol = solve_mpc(cmodel, x_obs, d, ref.window(t, cfg.horizon, tau, dt), cfg,
                        warm if dt == tau else None)
        if sol.diverged:
            log.diverged += 1
            events.append("diverged")
        w = plant.step(sol.u0.pusher(), dt)
        if w.contact or np.any(plant.schedule(t)[:3] != 0.0):
            events.append("contact")
        log.times.append(t)
        log.x_obs.append(x_obs.as_array())
        log.x_ref.append(ref.state(t))
        log.u.append(sol.u0)
        log.d_hat.append(d.d_hat.copy())
        log.events.append(events)
        log.dts.append(dt)
        if w.faulted:
            log.fault = w.faulted
            break
        x_pred = sol.predicted[1]
        warm = None if sol.diverged else sol
        t_prev, dt_prev = t, dt
        t = w.time
    return log
