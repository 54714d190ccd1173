"""Quasi-static pusher-slider dynamics on an ellipsoidal limit surface.

The state is [x, y, theta, psi_c] and the input [f_n, f_t, psi_dot], with the
contact force expressed in the touched face's (inward normal, tangent) frame.
The tangent is the inward normal turned a quarter CCW, which points toward
decreasing psi_c on every face.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .geom2d import ConvexPolygon, Pose2, VertexAmbiguity, rotation_matrix, wrap_angle

EPS_STRICT = 1e-6  # rad/s, closes the strict psi_dot inequalities
DEFAULT_FRICTION_FORCE = 1.2  # N, slider-ground friction mu_g * m * g


class FaceExit(RuntimeError):
    """The contact point left its face during a rollout."""


class InputOutOfBounds(ValueError):
    pass


class ContactMode(Enum):
    STICKING = "st"
    SLIDING_LEFT = "sl"
    SLIDING_RIGHT = "sr"


MODES = (ContactMode.STICKING, ContactMode.SLIDING_LEFT, ContactMode.SLIDING_RIGHT)


@dataclass(frozen=True)
class SliderState:
    pose: Pose2
    psi_c: float

    def __post_init__(self):
        object.__setattr__(self, "psi_c", wrap_angle(float(self.psi_c)))

    @classmethod
    def from_array(cls, a) -> "SliderState":
        return cls(Pose2(a[0], a[1], a[2]), a[3])

    @classmethod
    def of(cls, x: float, y: float, theta: float, psi_c: float) -> "SliderState":
        return cls(Pose2(x, y, theta), psi_c)

    def as_array(self) -> np.ndarray:
        p = self.pose
        return np.array([p.x, p.y, p.theta, self.psi_c])


@dataclass(frozen=True)
class PusherInput:
    f_n: float
    f_t: float
    psi_dot: float

    def __post_init__(self):
        for name in ("f_n", "f_t", "psi_dot"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise InputOutOfBounds(f"{name} is not finite")
            object.__setattr__(self, name, v)
        if self.f_n < -1e-12:
            raise InputOutOfBounds(f"f_n={self.f_n} is negative")

    @classmethod
    def from_array(cls, a) -> "PusherInput":
        return cls(a[0], a[1], a[2])

    def as_array(self) -> np.ndarray:
        return np.array([self.f_n, self.f_t, self.psi_dot])


ZERO_INPUT = PusherInput(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class InputPolytope:
    """{u | D u <= h}."""

    D: np.ndarray
    h: np.ndarray

    def residual(self, u) -> float:
        """Largest constraint violation (<= 0 when u is inside)."""
        return float(np.max(self.D @ np.asarray(u, dtype=float) - self.h))

    def contains(self, u, tol: float = 1e-9) -> bool:
        return self.residual(u) <= tol


def _moment_arm(poly: ConvexPolygon) -> float:
    """Area average of |r| over the footprint, integrated exactly in polar form."""

    def sec3(x):
        s, t = 1.0 / math.cos(x), math.tan(x)
        return 0.5 * (s * t + math.log(abs(s + t)))

    total = 0.0
    for i in range(poly.n_faces):
        a, b = poly.face_vertices(i)
        n = poly.outward_normals[i]
        d = float(n @ a)
        phi_n = math.atan2(n[1], n[0])
        lo = math.atan2(a[1], a[0]) - phi_n
        hi = math.atan2(b[1], b[0]) - phi_n
        lo, hi = wrap_angle(lo), wrap_angle(hi)
        total += d**3 / 3.0 * (sec3(hi) - sec3(lo))
    return total / poly.area


@dataclass(frozen=True, eq=False)
class SliderModel:
    footprint: ConvexPolygon
    A: np.ndarray
    mu_p: float
    f_bar: float
    psi_dot_bar: float
    # half-extent of allowed contact azimuths around each face center
    psi_bar: tuple = ()
    _intervals: tuple = field(init=False, repr=False)
    _polytopes: dict = field(init=False, repr=False)

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.shape != (3, 3) or not np.allclose(A, A.T) or np.min(np.linalg.eigvalsh(A)) <= 0:
            raise ValueError("limit matrix must be 3x3 symmetric positive definite")
        if self.mu_p <= 0 or self.f_bar <= 0 or self.psi_dot_bar <= 0:
            raise ValueError("mu_p, f_bar and psi_dot_bar must be positive")
        A.setflags(write=False)
        object.__setattr__(self, "A", A)
        poly = self.footprint
        pb = tuple(float(v) for v in self.psi_bar) if len(self.psi_bar) else (math.inf,) * poly.n_faces
        if len(pb) != poly.n_faces:
            raise ValueError("psi_bar needs one entry per face")
        object.__setattr__(self, "psi_bar", pb)
        ivs = []
        for i in range(poly.n_faces):
            a0, a1 = poly.face_span(i)
            c = poly.face_center_azimuth(i)
            c = a0 + np.remainder(c - a0, 2 * np.pi)
            margin = 0.05 * (a1 - a0)
            ivs.append((max(c - pb[i], a0 + margin), min(c + pb[i], a1 - margin), c))
        object.__setattr__(self, "_intervals", tuple(ivs))
        object.__setattr__(self, "_polytopes", {m: _build_polytope(self, m) for m in MODES})

    @classmethod
    def from_footprint(
        cls,
        footprint: ConvexPolygon,
        mu_p: float,
        f_bar: float,
        psi_dot_bar: float,
        friction_force: float = DEFAULT_FRICTION_FORCE,
        psi_bar=(),
    ) -> "SliderModel":
        """Ellipsoidal limit surface scaled by the ground friction force and the footprint's moment arm."""
        c = _moment_arm(footprint)
        F = friction_force
        A = np.diag([1.0 / F**2, 1.0 / F**2, 1.0 / (c * F) ** 2])
        return cls(footprint, A, mu_p, f_bar, psi_dot_bar, tuple(psi_bar))

    @property
    def n_faces(self) -> int:
        return self.footprint.n_faces

    def face_interval(self, i: int) -> tuple[float, float, float]:
        """(lo, hi, center) of allowed contact azimuths on face i, unwrapped consistently."""
        return self._intervals[i]

    def face_of(self, psi_c: float) -> int:
        return self.footprint.face_of_azimuth(psi_c)

    def unwrap_on_face(self, i: int, psi: float) -> float:
        """Express psi in the same branch as face i's interval."""
        c = self._intervals[i][2]
        return c + wrap_angle(psi - c)

    def validate_input(self, u: PusherInput, tol: float = 1e-9) -> ContactMode:
        """Return the mode whose polytope contains u, or raise InputOutOfBounds."""
        arr = u.as_array()
        for m in MODES:
            if mode_polytope(self, m).contains(arr, tol):
                return m
        raise InputOutOfBounds(f"{u} violates every contact-mode polytope")


def face_frame(model: SliderModel, face: int, psi_c: float):
    """Contact point, inward normal and tangent on a given face's supporting line."""
    poly = model.footprint
    p = poly.face_point(face, psi_c)
    n = -poly.outward_normals[face]
    t = np.array([-n[1], n[0]])
    return p, n, t


def _jacobian(p, n, t) -> np.ndarray:
    return np.array([[n[0], n[1], p[0] * n[1] - p[1] * n[0]], [t[0], t[1], p[0] * t[1] - p[1] * t[0]]])


def contact_jacobian(model: SliderModel, psi_c: float):
    """(J_c, face); J_c.T @ [f_n, f_t] is the body wrench [F_x, F_y, tau]."""
    face = model.face_of(psi_c)
    return _jacobian(*face_frame(model, face, psi_c)), face


def input_matrix(model: SliderModel, theta: float, psi_c: float, face: int) -> np.ndarray:
    """4x3 map from [f_n, f_t, psi_dot] to the state rate at heading theta."""
    J = _jacobian(*face_frame(model, face, psi_c))
    B = np.zeros((4, 3))
    B[:3, :2] = rotation_matrix(theta) @ model.A @ J.T
    B[3, 2] = 1.0
    return B


def linearize(model: SliderModel, xbar: SliderState, face: int | None = None) -> np.ndarray:
    """Input matrix B_i at xbar. The dynamics are input-affine, so this is exact in u."""
    if face is None:
        face = model.face_of(xbar.psi_c)
    return input_matrix(model, xbar.pose.theta, xbar.psi_c, face)


def eval_dynamics(model: SliderModel, x: SliderState, u: PusherInput) -> np.ndarray:
    return linearize(model, x) @ u.as_array()


def mode_polytope(model: SliderModel, mode: ContactMode) -> InputPolytope:
    return model._polytopes[mode]


def _build_polytope(model: SliderModel, mode: ContactMode) -> InputPolytope:
    mu, fb, pdb = model.mu_p, model.f_bar, model.psi_dot_bar
    rows = [[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [-mu, 1.0, 0.0], [-mu, -1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, -1.0]]
    h = [0.0, fb, 0.0, 0.0, 0.0, 0.0]
    if mode is ContactMode.SLIDING_LEFT:
        rows[3] = [mu, -1.0, 0.0]  # f_t = mu f_n
        h[4], h[5] = -EPS_STRICT, pdb
    elif mode is ContactMode.SLIDING_RIGHT:
        rows[2] = [mu, 1.0, 0.0]  # f_t = -mu f_n
        h[4], h[5] = pdb, -EPS_STRICT
    D = np.array(rows)
    h = np.array(h)
    D.setflags(write=False)
    h.setflags(write=False)
    return InputPolytope(D, h)


def _rate(model: SliderModel, x: np.ndarray, u: np.ndarray, face: int) -> np.ndarray:
    return input_matrix(model, x[2], x[3], face) @ u


def rk4_step(model: SliderModel, x: np.ndarray, u: np.ndarray, dt: float, face: int) -> np.ndarray:
    k1 = _rate(model, x, u, face)
    k2 = _rate(model, x + 0.5 * dt * k1, u, face)
    k3 = _rate(model, x + 0.5 * dt * k2, u, face)
    k4 = _rate(model, x + dt * k3, u, face)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def rollout_array(model: SliderModel, x0: np.ndarray, U: np.ndarray, dt: float, face: int) -> np.ndarray:
    """RK4 rollout with the face held fixed; rows are states (psi_c unwrapped on the face)."""
    a0, a1 = model.footprint.face_span(face)
    xs = np.empty((len(U) + 1, 4))
    x = np.array(x0, dtype=float)
    x[3] = model.unwrap_on_face(face, x[3])
    xs[0] = x
    for k, u in enumerate(U):
        x = rk4_step(model, x, u, dt, face)
        if not (a0 + 1e-9 < x[3] < a1 - 1e-9):
            raise FaceExit(f"psi_c={x[3]:.6f} left face {face} at step {k}")
        xs[k + 1] = x
    return xs


def rollout(model: SliderModel, x0: SliderState, controls, dt: float) -> list[SliderState]:
    """Integrate the dynamics with RK4 on x0's contact face."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    try:
        face = model.face_of(x0.psi_c)
    except VertexAmbiguity as e:
        raise FaceExit(str(e)) from e
    U = np.array([u.as_array() for u in controls]).reshape(-1, 3)
    xs = rollout_array(model, x0.as_array(), U, dt, face)
    return [SliderState.from_array(r) for r in xs]
