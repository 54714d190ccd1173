"""Planar geometry kernel: poses, convex polygons, SAT collision and contact queries."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

CONTACT_TOLERANCE = 1e-3  # m
_VERTEX_EPS = 1e-9  # rad


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = math.remainder(a, 2.0 * math.pi)
    if w <= -math.pi:
        w += 2.0 * math.pi
    return w


def wrap_array(a):
    a = np.asarray(a, dtype=float)
    w = np.remainder(a + np.pi, 2.0 * np.pi) - np.pi
    return np.where(w <= -np.pi, w + 2.0 * np.pi, w)


def rot2(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def rotation_matrix(theta: float) -> np.ndarray:
    """3x3 rotation taking a body twist [vx, vy, w] to the global frame."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


@dataclass(frozen=True)
class Pose2:
    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @classmethod
    def from_array(cls, a) -> "Pose2":
        return cls(a[0], a[1], a[2])

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def transform(self, pts) -> np.ndarray:
        """Body-frame points to global frame."""
        pts = np.asarray(pts, dtype=float)
        return pts @ rot2(self.theta).T + self.position


class VertexAmbiguity(ValueError):
    """Azimuth falls on a polygon vertex, so the contact face is ambiguous."""


@dataclass(frozen=True, eq=False)
class ConvexPolygon:
    """Strictly convex CCW polygon whose area centroid is the body origin."""

    vertices: np.ndarray
    _normals: np.ndarray = field(init=False, repr=False)
    _azimuths: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise ValueError("polygon needs at least three 2-D vertices")
        if _signed_area(v) <= 0:
            raise ValueError("vertices must wind counter-clockwise")
        e = np.roll(v, -1, axis=0) - v
        turn = cross2(e, np.roll(e, -1, axis=0))
        if np.any(turn <= 1e-12 * np.max(np.abs(v)) ** 2):
            raise ValueError("polygon must be strictly convex")
        c = _centroid(v)
        if np.linalg.norm(c) > 1e-9:
            raise ValueError(f"centroid {c} is not at the body origin")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        n = np.stack([e[:, 1], -e[:, 0]], axis=1)
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        n.setflags(write=False)
        object.__setattr__(self, "_normals", n)
        object.__setattr__(self, "_azimuths", np.arctan2(v[:, 1], v[:, 0]))

    @classmethod
    def from_points(cls, pts) -> "ConvexPolygon":
        """Build from CCW points, shifting them so the centroid is the origin."""
        p = np.asarray(pts, dtype=float)
        if _signed_area(p) < 0:
            p = p[::-1]
        return cls(p - _centroid(p))

    @classmethod
    def rectangle(cls, width: float, height: float) -> "ConvexPolygon":
        w, h = width / 2.0, height / 2.0
        return cls(np.array([[w, -h], [w, h], [-w, h], [-w, -h]]))

    def __eq__(self, other):
        return isinstance(other, ConvexPolygon) and np.array_equal(self.vertices, other.vertices)

    def __hash__(self):
        return hash(self.vertices.tobytes())

    @property
    def n_faces(self) -> int:
        return len(self.vertices)

    @property
    def outward_normals(self) -> np.ndarray:
        return self._normals

    @property
    def vertex_azimuths(self) -> np.ndarray:
        return self._azimuths

    @property
    def radius(self) -> float:
        return float(np.max(np.linalg.norm(self.vertices, axis=1)))

    @property
    def area(self) -> float:
        return _signed_area(self.vertices)

    def face_vertices(self, i: int):
        return self.vertices[i], self.vertices[(i + 1) % self.n_faces]

    def face_span(self, i: int) -> tuple[float, float]:
        """Azimuth interval (start, end) of face i; end may exceed pi (unwrapped CCW)."""
        a0 = self._azimuths[i]
        a1 = self._azimuths[(i + 1) % self.n_faces]
        return float(a0), float(a0 + np.remainder(a1 - a0, 2 * np.pi))

    def face_center_azimuth(self, i: int) -> float:
        a, b = self.face_vertices(i)
        m = 0.5 * (a + b)
        return math.atan2(m[1], m[0])

    def face_of_azimuth(self, psi: float) -> int:
        rel = np.remainder(psi - self._azimuths, 2 * np.pi)
        if np.any(np.minimum(rel, 2 * np.pi - rel) < _VERTEX_EPS):
            raise VertexAmbiguity(f"azimuth {psi} lies on a vertex")
        widths = np.remainder(np.roll(self._azimuths, -1) - self._azimuths, 2 * np.pi)
        hits = np.nonzero(rel < widths)[0]
        return int(hits[0])

    def face_point(self, i: int, psi: float) -> np.ndarray:
        """Intersection of the ray at azimuth psi with the supporting line of face i."""
        n = self._normals[i]
        d = float(n @ self.vertices[i])
        ray = np.array([math.cos(psi), math.sin(psi)])
        return (d / float(n @ ray)) * ray

    def contains(self, p, tol: float = 0.0) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(np.einsum("ij,ij->i", p - self.vertices, self._normals) <= tol))


def _signed_area(v) -> float:
    return 0.5 * float(np.sum(cross2(v, np.roll(v, -1, axis=0))))


def _centroid(v) -> np.ndarray:
    w = np.roll(v, -1, axis=0)
    c = cross2(v, w)
    a = 0.5 * np.sum(c)
    return np.sum((v + w) * c[:, None], axis=0) / (6.0 * a)


def point_on_perimeter(poly: ConvexPolygon, psi_c: float):
    """Boundary point at azimuth psi_c, its face index and that face's inward normal."""
    i = poly.face_of_azimuth(psi_c)
    return poly.face_point(i, psi_c), i, -poly.outward_normals[i]


@dataclass(frozen=True)
class ContactQuery:
    in_contact: bool
    point: np.ndarray
    normal: np.ndarray
    tangent: np.ndarray
    depth: float
    # signed separation along the normal: >0 gap, <0 penetration
    gap: float = 0.0


def _segment_distance(p, a, b):
    ab = b - a
    t = np.clip(np.einsum("...i,...i->...", p - a, ab) / np.einsum("...i,...i->...", ab, ab), 0.0, 1.0)
    return np.linalg.norm(p - (a + t[..., None] * ab), axis=-1)


def polygon_distance(va: np.ndarray, vb: np.ndarray) -> float:
    """Euclidean distance between two disjoint convex polygons given in world coordinates."""
    a0, a1 = va, np.roll(va, -1, axis=0)
    b0, b1 = vb, np.roll(vb, -1, axis=0)
    d1 = _segment_distance(vb[:, None, :], a0[None], a1[None])
    d2 = _segment_distance(va[:, None, :], b0[None], b1[None])
    return float(min(d1.min(), d2.min()))


def polygon_collide(
    a: ConvexPolygon, pose_a: Pose2, b: ConvexPolygon, pose_b: Pose2, tol: float = CONTACT_TOLERANCE
) -> ContactQuery:
    """Separating-axis contact query. The normal points from a into b."""
    va = pose_a.transform(a.vertices)
    vb = pose_b.transform(b.vertices)
    axes = np.vstack([a.outward_normals @ rot2(pose_a.theta).T, b.outward_normals @ rot2(pose_b.theta).T])
    pa = va @ axes.T
    pb = vb @ axes.T
    o_pos = pa.max(axis=0) - pb.min(axis=0)
    o_neg = pb.max(axis=0) - pa.min(axis=0)
    over = np.minimum(o_pos, o_neg)
    k = int(np.argmin(over))
    o = float(over[k])
    sign = 1.0 if o_pos[k] <= o_neg[k] else -1.0
    n = sign * axes[k]
    t = np.array([-n[1], n[0]])

    if o < 0.0:
        if -o > tol or polygon_distance(va, vb) > tol:
            return ContactQuery(False, np.zeros(2), n, t, 0.0, -o)

    # the polygon that supplied the axis holds the reference face
    if k < len(va):
        inc, ref = vb, va
        si, sr = inc @ n, ref @ n
        cand = inc[si <= si.min() + 1e-9]
        face = ref[sr >= sr.max() - 1e-9]
        shift = 0.5 * o * n
    else:
        inc, ref = va, vb
        si, sr = inc @ n, ref @ n
        cand = inc[si >= si.max() - 1e-9]
        face = ref[sr <= sr.min() + 1e-9]
        shift = -0.5 * o * n
    if len(cand) == 1:
        p = cand[0]
    else:
        # parallel faces: midpoint of the overlapping stretch
        ct = cand @ t
        rt = face @ t
        lo = max(ct.min(), rt.min())
        hi = min(ct.max(), rt.max())
        mid_t = 0.5 * (lo + hi) if lo <= hi else 0.5 * (ct.min() + ct.max())
        base = cand[0]
        p = base + (mid_t - float(base @ t)) * t
    return ContactQuery(True, p + shift, n, t, max(0.0, o), -o)
