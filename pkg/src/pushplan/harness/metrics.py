"""Per-scene geometric reference lengths and summary statistics."""

from __future__ import annotations

import math

import numpy as np
from scipy.sparse.csgraph import dijkstra
from shapely import LineString, Point, Polygon, unary_union

from .scene import Scene

# a buffered circle is drawn with 4 * QUAD_SEGS vertices on its arc; the polygon is
# inscribed in the true disk, so paths around it can only be shorter
QUAD_SEGS = 16


def inradius(scene: Scene) -> float:
    """Distance from the slider's reference point to its nearest edge line."""
    v = scene.slider.footprint.vertices
    n = scene.slider.footprint.outward_normals
    return float(np.min(np.einsum("ij,ij->i", v, n)))


def straight_distance(scene: Scene) -> float:
    c = scene.goal.center
    p = scene.x0.pose
    return float(math.hypot(c.x - p.x, c.y - p.y))


def _obstacles(scene: Scene, clearance: float):
    polys = [Polygon(f.pose.transform(f.footprint.vertices)).buffer(clearance, quad_segs=QUAD_SEGS)
             for f in scene.fixed]
    return unary_union(polys) if polys else None


def free_path_length(scene: Scene, clearance: float | None = None) -> float:
    """Shortest start-to-goal-center route of the slider's reference point around the fixed
    obstacles grown by `clearance` (default: the slider inradius). Movables are ignored since
    they can be pushed aside. Visibility graph plus Dijkstra; inf if no route exists."""
    r = inradius(scene) if clearance is None else clearance
    a = np.array(scene.x0.pose.position, dtype=float)
    b = np.array(scene.goal.center.position, dtype=float)
    obs = _obstacles(scene, r)
    if obs is None or obs.is_empty:
        return float(np.linalg.norm(b - a))
    # endpoints inside the grown set give no usable bound
    if obs.contains(Point(a)) or obs.contains(Point(b)):
        return float(np.linalg.norm(b - a))
    core = obs.buffer(-1e-9)
    parts = getattr(obs, "geoms", [obs])
    pts = [a, b]
    for g in parts:
        pts.extend(np.asarray(g.exterior.coords)[:-1])
    pts = np.array(pts)
    n = len(pts)
    W = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            seg = LineString([pts[i], pts[j]])
            if not seg.intersects(core):
                W[i, j] = W[j, i] = np.linalg.norm(pts[j] - pts[i])
    d = dijkstra(W, indices=0, directed=False)
    return float(d[1])


def detour_lower_bound(scene: Scene, clearance: float | None = None) -> float:
    """Length any path must add to the straight start-goal segment because of fixed obstacles."""
    return max(0.0, free_path_length(scene, clearance) - straight_distance(scene))


def quartiles(values) -> tuple[float, float, float]:
    """(q1, median, q3); nan for an empty input."""
    v = np.asarray(list(values), dtype=float)
    if v.size == 0:
        return (math.nan, math.nan, math.nan)
    q1, m, q3 = np.percentile(v, [25, 50, 75])
    return float(q1), float(m), float(q3)


def mean_std(values) -> tuple[float, float]:
    v = np.asarray(list(values), dtype=float)
    if v.size == 0:
        return (math.nan, math.nan)
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0
