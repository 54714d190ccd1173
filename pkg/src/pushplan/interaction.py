"""Single-contact LCP model of slider-obstacle interaction and obstacle forward integration.

Unknowns w = [f_alpha, f_beta+, f_beta-, lambda] and slacks z = M_lcp w + q with
0 <= w, 0 <= z, w'z = 0. f is expressed along M = [alpha, beta, -beta], so
the force on the obstacle is M f and the reaction on the pushing body is -M f.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from itertools import product

import numpy as np

from .dynamics import _moment_arm, DEFAULT_FRICTION_FORCE
from .geom2d import CONTACT_TOLERANCE, ConvexPolygon, Pose2, polygon_collide, rotation_matrix

PENETRATION_LIMIT = 5e-3  # m
LCP_TOL = 1e-8
SUBSTEP = 0.0025  # s, longest integration step while bodies touch


class NotInContact(ValueError):
    pass


class LcpUnsolvable(RuntimeError):
    pass


class FrameOrientation(Enum):
    NORMAL_INTO_OBSTACLE = "into_obstacle"
    NORMAL_INTO_SLIDER = "into_slider"


@dataclass(frozen=True)
class ContactFrame:
    alpha: np.ndarray
    beta: np.ndarray
    point: np.ndarray
    orientation: FrameOrientation = FrameOrientation.NORMAL_INTO_OBSTACLE

    @classmethod
    def from_normal(cls, alpha, point, orientation=FrameOrientation.NORMAL_INTO_OBSTACLE) -> "ContactFrame":
        a = np.asarray(alpha, dtype=float)
        a = a / np.linalg.norm(a)
        return cls(a, np.array([-a[1], a[0]]), np.asarray(point, dtype=float), orientation)

    def reversed(self) -> "ContactFrame":
        flip = {
            FrameOrientation.NORMAL_INTO_OBSTACLE: FrameOrientation.NORMAL_INTO_SLIDER,
            FrameOrientation.NORMAL_INTO_SLIDER: FrameOrientation.NORMAL_INTO_OBSTACLE,
        }
        return ContactFrame(-self.alpha, -self.beta, self.point, flip[self.orientation])

    @property
    def M(self) -> np.ndarray:
        return np.column_stack([self.alpha, self.beta, -self.beta])


@dataclass(frozen=True)
class ContactLCP:
    M_lcp: np.ndarray
    q: np.ndarray
    f: np.ndarray | None = None
    lam: float | None = None
    z: np.ndarray | None = None
    method: str = ""

    @property
    def w(self) -> np.ndarray:
        return np.append(self.f, self.lam)

    def residual(self) -> float:
        """Largest Fischer-Burmeister residual of the stored solution."""
        return float(np.max(np.abs(_fb(self.M_lcp @ self.w + self.q, self.w))))


@dataclass(frozen=True, eq=False)
class ObstacleModel:
    footprint: ConvexPolygon
    A: np.ndarray
    mu: float
    movable: bool = True

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.shape != (3, 3) or not np.allclose(A, A.T) or np.min(np.linalg.eigvalsh(A)) <= 0:
            raise ValueError("obstacle limit matrix must be SPD")
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")
        object.__setattr__(self, "A", A)

    @classmethod
    def from_footprint(cls, footprint: ConvexPolygon, mu: float, movable: bool = True,
                       friction_force: float = DEFAULT_FRICTION_FORCE) -> "ObstacleModel":
        c = _moment_arm(footprint)
        F = friction_force
        return cls(footprint, np.diag([1.0 / F**2, 1.0 / F**2, 1.0 / (c * F) ** 2]), mu, movable)


def point_jacobian(r) -> np.ndarray:
    """Maps a global twist [vx, vy, w] of a body to the velocity of the point at offset r."""
    return np.array([[1.0, 0.0, -r[1]], [0.0, 1.0, r[0]]])


def contact_jacobians(slider_pose: Pose2, slider_poly: ConvexPolygon, obs_pose: Pose2, obs_poly: ConvexPolygon,
                      frame: ContactFrame, tol: float = CONTACT_TOLERANCE):
    """(J_s, J_o) for the contact point of frame, both in the global frame."""
    if not polygon_collide(slider_poly, slider_pose, obs_poly, obs_pose, tol).in_contact:
        raise NotInContact("bodies are separated beyond the contact tolerance")
    return (point_jacobian(frame.point - slider_pose.position),
            point_jacobian(frame.point - obs_pose.position))


def global_limit_matrix(A_body: np.ndarray, theta: float) -> np.ndarray:
    R = rotation_matrix(theta)
    return R @ A_body @ R.T


def assemble_lcp(J_s, J_o, A_obs, mu: float, V_s, frame: ContactFrame, theta_obs: float = 0.0,
                 gap: float = 0.0, h: float | None = None) -> ContactLCP:
    """LCP for one contact. A_obs is body-frame; an optional gap/h term keeps a separated pair apart
    until the approach closes the gap within one step of length h."""
    M = frame.M
    K = J_o @ global_limit_matrix(A_obs, theta_obs) @ J_o.T
    L = np.zeros((4, 4))
    L[:3, :3] = M.T @ K @ M
    L[1, 3] = L[2, 3] = 1.0
    L[3, :3] = [mu, -1.0, -1.0]
    q = np.zeros(4)
    q[:3] = -M.T @ (J_s @ np.asarray(V_s, dtype=float))
    if h is not None and gap != 0.0:
        q[0] += gap / h
    return ContactLCP(L, q)


def _fb(a, b):
    return np.sqrt(a * a + b * b) - a - b


def _fb_newton(L, q, max_iter: int = 100, tol: float = 1e-12):
    w = np.maximum(-q, 0.0) + 1e-3
    w[3] = 0.0
    n = len(q)
    for _ in range(max_iter):
        z = L @ w + q
        phi = _fb(z, w)
        merit = float(phi @ phi)
        if np.max(np.abs(phi)) <= tol:
            return w
        r = np.sqrt(z * z + w * w)
        small = r < 1e-14
        r_safe = np.where(small, 1.0, r)
        da = np.where(small, 1.0 / math.sqrt(2.0), z / r_safe) - 1.0
        db = np.where(small, 1.0 / math.sqrt(2.0), w / r_safe) - 1.0
        J = da[:, None] * L + np.diag(db)
        try:
            d = np.linalg.solve(J, -phi)
        except np.linalg.LinAlgError:
            d = np.linalg.lstsq(J, -phi, rcond=None)[0]
        t = 1.0
        for _ in range(20):
            wn = w + t * d
            pn = _fb(L @ wn + q, wn)
            if float(pn @ pn) <= (1.0 - 1e-4 * t) * merit:
                break
            t *= 0.5
        else:
            return None
        w = wn
    z = L @ w + q
    return w if np.max(np.abs(_fb(z, w))) <= LCP_TOL else None


def _enumerate(L, q, tol: float = 1e-10):
    """Try every complementary piece; returns the first (smallest-norm) valid solution."""
    best = None
    for pattern in product((False, True), repeat=len(q)):
        S = np.array(pattern)
        w = np.zeros(len(q))
        if S.any():
            A = L[np.ix_(S, S)]
            if abs(np.linalg.det(A)) < 1e-14:
                continue
            w[S] = np.linalg.solve(A, -q[S])
        z = L @ w + q
        if np.all(w >= -tol) and np.all(z >= -tol):
            if best is None or np.linalg.norm(w) < np.linalg.norm(best):
                best = w
    return best


def _canonical(w, q):
    """Resolve the friction split: only the net f_beta+ - f_beta- is physical. Without a
    normal force the slip multiplier is free above max(-q1, -q2); take the smallest."""
    w = np.maximum(w, 0.0)
    w[:3][w[:3] <= LCP_TOL * 1e-3] = 0.0  # Newton leaves ~1e-30 dust on inactive forces
    net = w[1] - w[2]
    w[1], w[2] = max(net, 0.0), max(-net, 0.0)
    if w[0] == 0.0 and net == 0.0:
        w[3] = max(0.0, -q[1], -q[2])
    return w


def solve_lcp(lcp: ContactLCP) -> ContactLCP:
    """Semismooth Newton on the Fischer-Burmeister system with a piece-enumeration fallback."""
    L, q = lcp.M_lcp, lcp.q
    if np.all(q >= 0):
        w, method = np.zeros(4), "trivial"
    else:
        w, method = _fb_newton(L, q), "newton"
        if w is None or not np.all(np.isfinite(w)):
            w, method = _enumerate(L, q), "enumeration"
        if w is None:
            raise LcpUnsolvable("no complementary piece solves the LCP")
    w = _canonical(w, q)
    z = L @ w + q
    if np.max(np.abs(_fb(z, w))) > LCP_TOL:
        w2 = _enumerate(L, q)
        if w2 is None:
            raise LcpUnsolvable("solution does not meet the complementarity tolerance")
        w, method = _canonical(w2, q), "enumeration"
        z = L @ w + q
    return replace(lcp, f=w[:3], lam=float(w[3]), z=z, method=method)


def obstacle_twist(A_obs, theta_obs: float, J_o, frame: ContactFrame, f) -> np.ndarray:
    """Global twist of an obstacle under contact force M f."""
    return global_limit_matrix(A_obs, theta_obs) @ (J_o.T @ (frame.M @ np.asarray(f, dtype=float)))


def integrate_obstacle(obs_pose: Pose2, A_obs, J_o, frame: ContactFrame, f, tau: float) -> Pose2:
    V = obstacle_twist(A_obs, obs_pose.theta, J_o, frame, f)
    return Pose2(obs_pose.x + tau * V[0], obs_pose.y + tau * V[1], obs_pose.theta + tau * V[2])


@dataclass
class InteractionResult:
    feasible: bool
    movable_poses: list
    # per trajectory step: mean global wrench [Fx, Fy, tau] on the slider about its centroid
    reactions: np.ndarray
    reason: str = ""
    # per step: True while the slider touched a movable
    contact: np.ndarray = field(default=None)


def _as_states(slider_traj) -> np.ndarray:
    rows = [s.as_array() if hasattr(s, "as_array") else np.asarray(s, dtype=float) for s in slider_traj]
    X = np.array(rows, dtype=float)
    X[:, 2] = np.unwrap(X[:, 2])
    return X


class _Body:
    __slots__ = ("model", "pose", "radius")

    def __init__(self, model, pose):
        self.model, self.pose = model, pose
        self.radius = model.footprint.radius


def _near(pa: Pose2, ra: float, pb: Pose2, rb: float, margin: float) -> bool:
    return math.hypot(pa.x - pb.x, pa.y - pb.y) <= ra + rb + margin


def push_contact(pusher_poly, pusher_pose: Pose2, V_p, body: "_Body", h: float, tol: float = CONTACT_TOLERANCE):
    """Resolve one pusher-body contact over a step of length h.

    pusher_pose is the pusher's pose at the end of the step (predictive detection);
    returns (twist of the body, reaction wrench on the pusher, penetration) or None.
    """
    cq = polygon_collide(pusher_poly, pusher_pose, body.model.footprint, body.pose, tol)
    if not cq.in_contact:
        return None
    frame = ContactFrame(cq.normal, cq.tangent, cq.point)
    J_s = point_jacobian(cq.point - pusher_pose.position)
    J_o = point_jacobian(cq.point - body.pose.position)
    # the predicted gap already includes this step's approach, so add it back
    gap0 = cq.gap + h * float(frame.alpha @ (J_s @ V_p))
    lcp = solve_lcp(assemble_lcp(J_s, J_o, body.model.A, body.model.mu, V_p, frame, body.pose.theta, gap0, h))
    force = frame.M @ lcp.f
    V_o = global_limit_matrix(body.model.A, body.pose.theta) @ (J_o.T @ force)
    reaction = -(J_s.T @ force)
    return V_o, reaction, cq.depth


def simulate_interaction(slider_traj, controls, movables, fixed, model, dt: float, contact_enabled: bool = True,
                         tol: float = CONTACT_TOLERANCE) -> InteractionResult:
    """Replay a slider trajectory through the obstacle field.

    Movables respond through the contact LCP; chains are resolved in discovery
    order. Touching a fixed obstacle, penetrating deeper than the limit, or (with
    contact disabled) touching any movable makes the motion infeasible.
    """
    X = _as_states(slider_traj)
    n_steps = len(X) - 1
    poly = model.footprint
    r_s = poly.radius
    bodies = [_Body(m, p) for m, p in movables]
    walls = [_Body(m, p) for m, p in fixed]
    reactions = np.zeros((n_steps, 3))
    touching = np.zeros(n_steps, dtype=bool)

    def fail(reason):
        return InteractionResult(False, [b.pose for b in bodies], reactions, reason, touching)

    for k in range(n_steps):
        p0, p1 = X[k, :3], X[k + 1, :3]
        step_len = float(np.hypot(*(p1[:2] - p0[:2])))
        end = Pose2(*p1)
        for wb in walls:
            if _near(end, r_s, wb.pose, wb.radius, tol) and polygon_collide(
                poly, end, wb.model.footprint, wb.pose, tol
            ).in_contact:
                return fail("fixed-contact")
        near = [i for i, b in enumerate(bodies) if _near(end, r_s, b.pose, b.radius, tol + step_len)]
        if not near:
            continue
        if not contact_enabled:
            for i in near:
                if polygon_collide(poly, end, bodies[i].model.footprint, bodies[i].pose, tol).in_contact:
                    return fail("movable-contact")
            continue
        n_sub = max(1, math.ceil(dt / SUBSTEP - 1e-9))
        h = dt / n_sub
        for j in range(n_sub):
            a = p0 + (p1 - p0) * (j / n_sub)
            b = p0 + (p1 - p0) * ((j + 1) / n_sub)
            V_s = (b - a) / h
            s_end = Pose2(*b)
            moved = {}
            queue = deque()
            for i in near:
                try:
                    out = push_contact(poly, s_end, V_s, bodies[i], h, tol)
                except LcpUnsolvable:
                    return fail("lcp")
                if out is None:
                    continue
                V_o, reaction, depth = out
                if depth > PENETRATION_LIMIT:
                    return fail("penetration")
                touching[k] = True
                reactions[k] += reaction / n_sub
                moved[i] = moved.get(i, 0.0) + V_o
                queue.append(i)
            # movables pushed by movables, in discovery order
            seen = set(queue)
            while queue:
                i = queue.popleft()
                src = bodies[i]
                V_i = moved[i]
                src_end = Pose2(*(src.pose.as_array() + h * V_i))
                for m, other in enumerate(bodies):
                    if m == i or not _near(src_end, src.radius, other.pose, other.radius, tol + h * np.hypot(*V_i[:2])):
                        continue
                    try:
                        out = push_contact(src.model.footprint, src_end, V_i, other, h, tol)
                    except LcpUnsolvable:
                        return fail("lcp")
                    if out is None:
                        continue
                    V_o, _, depth = out
                    if depth > PENETRATION_LIMIT:
                        return fail("penetration")
                    moved[m] = moved.get(m, 0.0) + V_o
                    if m not in seen:
                        seen.add(m)
                        queue.append(m)
            for i, V in moved.items():
                bodies[i].pose = Pose2(*(bodies[i].pose.as_array() + h * V))
            for i in moved:
                b_i = bodies[i]
                for wb in walls:
                    if _near(b_i.pose, b_i.radius, wb.pose, wb.radius, tol) and polygon_collide(
                        b_i.model.footprint, b_i.pose, wb.model.footprint, wb.pose, tol
                    ).in_contact:
                        return fail("fixed-contact")
        for i in near:
            b_i = bodies[i]
            cq = polygon_collide(poly, end, b_i.model.footprint, b_i.pose, tol)
            if cq.depth > PENETRATION_LIMIT:
                return fail("penetration")
    return InteractionResult(True, [b.pose for b in bodies], reactions, "", touching)
