"""Finite-horizon LQR steering between slider states, verified on the nonlinear dynamics."""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (
    MODES,
    ContactMode,
    PusherInput,
    SliderModel,
    SliderState,
    FaceExit,
    input_matrix,
    mode_polytope,
    rk4_step,
)
from .geom2d import Pose2, wrap_angle
from .qp import QpTable
from .reachset import DEFAULT_WEIGHTS

CONNECT_TOLERANCE = 5e-3  # weighted units


class SingularRiccati(ArithmeticError):
    pass


@dataclass(frozen=True)
class LqrConfig:
    tau_lqr: float = 0.01
    horizon: int = 5
    C_Q: np.ndarray = field(default_factory=lambda: np.diag([1.0, 1.0, 0.1, 0.01]))
    # force entries in N^-2, psi_dot entry in (rad/s)^-2
    C_R: np.ndarray = field(default_factory=lambda: np.diag([1e-6, 1e-6, 1e-8]))

    def __post_init__(self):
        Q = np.asarray(self.C_Q, dtype=float)
        R = np.asarray(self.C_R, dtype=float)
        if self.tau_lqr <= 0 or self.horizon < 1:
            raise ValueError("tau_lqr must be positive and horizon at least 1")
        if np.min(np.linalg.eigvalsh(0.5 * (Q + Q.T))) < -1e-12:
            raise ValueError("C_Q must be positive semidefinite")
        if np.min(np.linalg.eigvalsh(0.5 * (R + R.T))) <= 0:
            raise ValueError("C_R must be positive definite")
        object.__setattr__(self, "C_Q", Q)
        object.__setattr__(self, "C_R", R)

    @property
    def tau(self) -> float:
        return self.tau_lqr * self.horizon


@dataclass(frozen=True)
class GoalRegion:
    """Axis-aligned box around a goal pose."""

    center: Pose2
    dx: float
    dy: float
    dtheta: float

    def contains(self, pose: Pose2) -> bool:
        c = self.center
        return (
            abs(pose.x - c.x) <= self.dx
            and abs(pose.y - c.y) <= self.dy
            and abs(wrap_angle(pose.theta - c.theta)) <= self.dtheta
        )


@dataclass(frozen=True)
class ConnectionResult:
    controls: tuple
    x_term: SliderState
    reached: bool
    # every substate of the rollout, start included
    states: np.ndarray = field(repr=False, default=None)
    face: int = -1
    mode: ContactMode = ContactMode.STICKING


def lqr_gains(B: np.ndarray, cfg: LqrConfig) -> list[np.ndarray]:
    """Time-varying gains K[0..N-1] for x+ = x + tau_lqr B u with terminal cost C_Q."""
    Bd = cfg.tau_lqr * np.asarray(B, dtype=float)
    Q, R = cfg.C_Q, cfg.C_R
    P = Q.copy()
    gains = []
    for _ in range(cfg.horizon):
        S = R + Bd.T @ P @ Bd
        if not np.all(np.isfinite(S)) or abs(np.linalg.det(S)) < 1e-300:
            raise SingularRiccati("R + B'PB is singular")
        K = np.linalg.solve(S, Bd.T @ P)
        P = Q + P - P @ Bd @ K
        P = 0.5 * (P + P.T)
        gains.append(K)
    return gains[::-1]


def weighted_distance(a, b, weights=None) -> float:
    w = DEFAULT_WEIGHTS if weights is None else weights
    a = a.as_array() if isinstance(a, SliderState) else np.asarray(a, dtype=float)
    b = b.as_array() if isinstance(b, SliderState) else np.asarray(b, dtype=float)
    d = a - b
    d[2] = wrap_angle(d[2])
    d[3] = wrap_angle(d[3])
    return float(np.linalg.norm(w * d))


def start_state(model: SliderModel, x_gen: SliderState, face: int) -> np.ndarray:
    """x_gen on the requested face: unchanged on its own face, else the pusher re-placed at the face center."""
    x = x_gen.as_array()
    try:
        same = model.face_of(x_gen.psi_c) == face
    except ValueError:
        same = False
    x[3] = model.unwrap_on_face(face, x[3]) if same else model.face_interval(face)[2]
    return x


_CLAMP_TABLES: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def clamp_input(model: SliderModel, mode: ContactMode, u: np.ndarray) -> np.ndarray:
    """Exact projection of u onto the mode polytope in force- and rate-normalized units."""
    tables = _CLAMP_TABLES.setdefault(model, {})
    if mode not in tables:
        L = np.array([1.0 / model.f_bar, 1.0 / model.f_bar, 1.0 / model.psi_dot_bar])
        poly = mode_polytope(model, mode)
        tables[mode] = (QpTable(np.diag(L**2), poly.D, poly.h), np.diag(L**2))
    table, H = tables[mode]
    y, _, ok = table.solve((-H @ u)[None])
    if not ok[0]:
        raise ValueError("empty mode polytope")
    u = y[0]
    u[0] = max(u[0], 0.0)  # solver round-off on the f_n >= 0 face
    return u


def steer(model: SliderModel, x0: np.ndarray, target: np.ndarray, face: int, mode: ContactMode,
          psi_lin: float, cfg: LqrConfig):
    """Closed-loop LQR rollout from array state x0; returns (controls array, states array)."""
    B = input_matrix(model, x0[2], psi_lin, face)
    gains = lqr_gains(B, cfg)
    tgt = target.copy()
    tgt[3] = model.unwrap_on_face(face, tgt[3])
    xs = np.empty((cfg.horizon + 1, 4))
    us = np.empty((cfg.horizon, 3))
    x = x0.copy()
    xs[0] = x
    a0, a1 = model.footprint.face_span(face)
    for k, K in enumerate(gains):
        e = x - tgt
        e[2] = wrap_angle(e[2])
        u = clamp_input(model, mode, -K @ e)
        x = rk4_step(model, x, u, cfg.tau_lqr, face)
        if not (a0 + 1e-9 < x[3] < a1 - 1e-9):
            raise FaceExit(f"psi_c={x[3]:.6f} left face {face}")
        us[k] = u
        xs[k + 1] = x
    return us, xs


def connect(model: SliderModel, x_gen: SliderState, target: SliderState, cell, cfg: LqrConfig | None = None,
            tol: float = CONNECT_TOLERANCE, weights=None) -> ConnectionResult:
    """Drive x_gen toward target with gains linearized at the cell's contact azimuth."""
    cfg = cfg or LqrConfig()
    face, mode, psi_star = cell
    x0 = start_state(model, x_gen, face)
    us, xs = steer(model, x0, target.as_array(), face, mode, psi_star, cfg)
    x_term = SliderState.from_array(xs[-1])
    reached = weighted_distance(x_term, target, weights) <= tol
    controls = tuple(PusherInput.from_array(u) for u in us)
    return ConnectionResult(controls, x_term, reached, xs, face, mode)


def connect_goal(model: SliderModel, x: SliderState, goal: GoalRegion, cfg: LqrConfig | None = None,
                 weights=None) -> ConnectionResult:
    """Try to steer x into the goal box within one horizon on its current face."""
    cfg = cfg or LqrConfig()
    face = model.face_of(x.psi_c)
    if goal.contains(x.pose):
        xa = x.as_array()
        xa[3] = model.unwrap_on_face(face, xa[3])
        return ConnectionResult((), x, True, xa[None], face, ContactMode.STICKING)
    c = goal.center
    target = SliderState(c, x.psi_c)
    best = None
    for mode in MODES:
        try:
            res = connect(model, x, target, (face, mode, x.psi_c), cfg, weights=weights)
        except FaceExit:
            continue
        res = ConnectionResult(res.controls, res.x_term, goal.contains(res.x_term.pose), res.states, face, mode)
        if res.reached:
            return res
        d = weighted_distance(res.x_term, target, weights)
        if best is None or d < best[0]:
            best = (d, res)
    if best is None:
        xa = x.as_array()
        return ConnectionResult((), x, False, xa[None], face, ContactMode.STICKING)
    return best[1]


def goal_reach_bound(model: SliderModel, cfg: LqrConfig) -> float:
    """Largest centroid displacement (m) possible within one connection horizon."""
    return float(np.linalg.norm(model.A[:2, :2], 2)) * model.f_bar * math.hypot(1.0, model.mu_p) * cfg.tau
