"""Convex terminal-set approximation of the one-step reachable set and nearest-neighbor queries.

A cell collects the states reachable in one horizon tau on a fixed face i in a
fixed contact mode j. Writing the contact point as p_ref + s * t on the face
line (p_ref the foot of the perpendicular from the centroid) makes the body
torque p_ref x F - s f_n, so with the moment m = s f_n the pose displacement is
linear in y = (f_n, f_t, m) and the band s_lo <= s <= s_hi turns into the linear
rows s_lo f_n <= m <= s_hi f_n. The pose part of the cell is therefore the
linear image of a polytope, and the contact-azimuth part is an interval, so
every cell is a convex product set and projecting onto it is a 3-variable QP
plus a clamp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from numba import njit
from scipy.optimize import minimize_scalar

from .dynamics import (
    EPS_STRICT,
    MODES,
    ContactMode,
    PusherInput,
    SliderModel,
    SliderState,
    input_matrix,
    mode_polytope,
)
from .geom2d import rotation_matrix, wrap_angle, wrap_array
from .qp import QpTable, solve_qp

DEFAULT_WEIGHTS = np.array([1.0, 1.0, 0.1, 0.01])
GRID_POINTS = 21


class InfeasibleCell(RuntimeError):
    pass


class EmptyTree(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TerminalSet:
    generating_state: SliderState
    face_index: int
    mode: ContactMode
    B: np.ndarray  # 4x3 input matrix at the band center
    tau: float
    psi_band: tuple  # contact azimuths usable on this face
    psi_range: tuple  # terminal psi_c interval
    model: SliderModel = field(repr=False)
    # optional psi -> 4x3 input matrix override, projected by grid search
    b_map: Callable | None = field(default=None, repr=False)
    _geo: dict = field(default=None, repr=False)

    @property
    def empty(self) -> bool:
        return self.psi_range[0] > self.psi_range[1]

    @property
    def key(self) -> tuple:
        return (self.face_index, MODES.index(self.mode))

    def member(self, y, psi_final) -> np.ndarray:
        """State reached with y = (f_n, f_t, m) and terminal azimuth psi_final."""
        g = self._geo
        x = np.empty(4)
        x[:3] = g["x0"] + g["lin"] @ np.asarray(y, dtype=float)
        x[3] = psi_final
        return x

    def sample(self, rng, n: int) -> np.ndarray:
        """n random member states drawn from feasible inputs and contact azimuths."""
        model = self.model
        U = _sample_inputs(model, self.mode, rng, n)
        psi_c = rng.uniform(*self.psi_band, size=n)
        if self.b_map is not None:
            return np.array([self._base(p) + self.tau * self.b_map(p) @ u for p, u in zip(psi_c, U)])
        g = self._geo
        # the azimuth ray meets the face line at distance d / cos(angle to the outward normal)
        ray = np.stack([np.cos(psi_c), np.sin(psi_c)], axis=1)
        pts = (g["d"] / (ray @ -g["n"]))[:, None] * ray
        s = pts @ g["t"]
        Y = np.stack([U[:, 0], U[:, 1], s * U[:, 0]], axis=1)
        out = np.empty((n, 4))
        out[:, :3] = g["x0"] + Y @ g["lin"].T
        out[:, 3] = rng.uniform(*self.psi_range, size=n)
        return out

    def _base(self, psi_c: float) -> np.ndarray:
        p = self.generating_state.pose
        return np.array([p.x, p.y, p.theta, psi_c])


def _sample_inputs(model: SliderModel, mode: ContactMode, rng, n: int) -> np.ndarray:
    fn = rng.uniform(0.0, model.f_bar, size=n)
    mu, pdb = model.mu_p, model.psi_dot_bar
    if mode is ContactMode.STICKING:
        return np.stack([fn, rng.uniform(-1.0, 1.0, size=n) * mu * fn, np.zeros(n)], axis=1)
    if mode is ContactMode.SLIDING_LEFT:
        return np.stack([fn, mu * fn, rng.uniform(-pdb, -EPS_STRICT, size=n)], axis=1)
    return np.stack([fn, -mu * fn, rng.uniform(EPS_STRICT, pdb, size=n)], axis=1)


def _face_geometry(model: SliderModel, face: int, theta: float, tau: float, psi_band) -> dict:
    poly = model.footprint
    n = -poly.outward_normals[face]
    t = np.array([-n[1], n[0]])
    d = float(poly.outward_normals[face] @ poly.vertices[face])
    p_ref = -d * n
    cr = lambda a, b: a[0] * b[1] - a[1] * b[0]  # noqa: E731
    wrench = np.array([[n[0], t[0], 0.0], [n[1], t[1], 0.0], [cr(p_ref, n), cr(p_ref, t), -1.0]])
    lin = tau * rotation_matrix(theta) @ model.A @ wrench
    s_pts = [float(t @ poly.face_point(face, a)) for a in psi_band]
    return {"lin": lin, "t": t, "n": n, "d": d, "p_ref": p_ref, "s_lo": min(s_pts), "s_hi": max(s_pts)}


def _y_constraints(model: SliderModel, mode: ContactMode, s_lo: float, s_hi: float):
    P = mode_polytope(model, mode)
    G = np.zeros((6, 3))
    h = np.zeros(6)
    G[:4, :2] = P.D[:4, :2]
    h[:4] = P.h[:4]
    G[4] = [s_lo, 0.0, -1.0]
    G[5] = [-s_hi, 0.0, 1.0]
    return G, h


def _current_band(model: SliderModel, face: int, psi: float, half: float):
    lo_f, hi_f, _ = model.face_interval(face)
    lo, hi = max(psi - half, lo_f), min(psi + half, hi_f)
    return min(lo, psi), max(hi, psi)


def _other_band(model: SliderModel, face: int, half: float):
    lo_f, hi_f, c = model.face_interval(face)
    return max(c - half, lo_f), min(c + half, hi_f)


def _terminal_range(model: SliderModel, face: int, mode: ContactMode, band, tau: float):
    lo_f, hi_f, _ = model.face_interval(face)
    lo, hi = band
    if mode is ContactMode.STICKING:
        return lo, hi
    step, eps = tau * model.psi_dot_bar, tau * EPS_STRICT
    if mode is ContactMode.SLIDING_LEFT:
        return max(lo - step, min(lo_f, lo)), hi - eps
    return lo + eps, min(hi + step, max(hi_f, hi))


def make_cell(model: SliderModel, xbar: SliderState, face: int, mode: ContactMode, tau: float, current_face: int):
    half = tau * model.psi_dot_bar
    if face == current_face:
        band = _current_band(model, face, model.unwrap_on_face(face, xbar.psi_c), half)
    else:
        band = _other_band(model, face, half)
    theta = xbar.pose.theta
    geo = _face_geometry(model, face, theta, tau, band)
    geo["x0"] = np.array([xbar.pose.x, xbar.pose.y, theta])
    geo["G"], geo["h"] = _y_constraints(model, mode, geo["s_lo"], geo["s_hi"])
    B = input_matrix(model, theta, 0.5 * (band[0] + band[1]), face)
    rng_ = _terminal_range(model, face, mode, band, tau)
    return TerminalSet(xbar, face, mode, B, tau, band, rng_, model, None, geo)


@dataclass(frozen=True, eq=False)
class ReachableSet:
    generating_state: SliderState
    cells: tuple
    tau: float
    weights: np.ndarray
    _table: QpTable = field(repr=False)
    _Mw: np.ndarray = field(repr=False)
    # bound on the weighted pose displacement any cell can produce
    radius: float = 0.0


def build_reachable_set(model: SliderModel, xbar: SliderState, tau: float, weights=None) -> ReachableSet:
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    w = DEFAULT_WEIGHTS if weights is None else np.asarray(weights, dtype=float)
    cur = model.face_of(xbar.psi_c)
    cells = tuple(make_cell(model, xbar, i, j, tau, cur) for i in range(model.n_faces) for j in MODES)
    Mw = np.stack([w[:3, None] * c._geo["lin"] for c in cells])
    G = np.stack([c._geo["G"] for c in cells])
    h = np.stack([c._geo["h"] for c in cells])
    H = Mw.transpose(0, 2, 1) @ Mw
    table = QpTable(H, G, h)
    # extreme points of the y polytope: f_n in {0, f_bar}, f_t = +-mu f_n, m = s f_n
    fb, mu = model.f_bar, model.mu_p
    r = 0.0
    for k, c in enumerate(cells):
        for ft in (-mu * fb, mu * fb):
            for s in (c._geo["s_lo"], c._geo["s_hi"]):
                r = max(r, float(np.linalg.norm(Mw[k] @ np.array([fb, ft, s * fb]))))
    return ReachableSet(xbar, cells, tau, w, table, Mw, r)


class Projection(NamedTuple):
    distance: float
    x_proj: SliderState
    u_star: PusherInput
    psi_star: float


def _pose_residual(xbar: SliderState, q: np.ndarray, w) -> np.ndarray:
    p = xbar.pose
    return w[:3] * np.array([q[0] - p.x, q[1] - p.y, wrap_angle(q[2] - p.theta)])


def _clamp_psi(cell: TerminalSet, psi_q: float):
    lo, hi = cell.psi_range
    mid = 0.5 * (lo + hi)
    q = mid + wrap_angle(psi_q - mid)
    return min(max(q, lo), hi), q


def _finish(cell: TerminalSet, y, q, w) -> Projection:
    """Assemble projection point, azimuth residual and the achieving input."""
    model = cell.model
    g = cell._geo
    psi_f, psi_q = _clamp_psi(cell, q[3])
    x = cell.member(y, psi_f)
    d_pose = w[:3] * np.array([x[0] - q[0], x[1] - q[1], wrap_angle(x[2] - q[2])])
    dist = math.sqrt(float(d_pose @ d_pose) + (w[3] * (psi_f - psi_q)) ** 2)
    fn = max(float(y[0]), 0.0)
    s = y[2] / fn if fn > 1e-12 else 0.5 * (g["s_lo"] + g["s_hi"])
    s = min(max(s, g["s_lo"]), g["s_hi"])
    pc = g["p_ref"] + s * g["t"]
    psi_star = cell.model.unwrap_on_face(cell.face_index, math.atan2(pc[1], pc[0]))
    pd = (psi_f - psi_star) / cell.tau if cell.tau > 0 else 0.0
    pdb = model.psi_dot_bar
    if cell.mode is ContactMode.STICKING:
        pd = 0.0
    elif cell.mode is ContactMode.SLIDING_LEFT:
        pd = min(max(pd, -pdb), -EPS_STRICT)
    else:
        pd = min(max(pd, EPS_STRICT), pdb)
    ft = float(y[1])
    mu = model.mu_p
    if cell.mode is ContactMode.SLIDING_LEFT:
        ft = mu * fn
    elif cell.mode is ContactMode.SLIDING_RIGHT:
        ft = -mu * fn
    else:
        ft = min(max(ft, -mu * fn), mu * fn)
    u = PusherInput(min(fn, model.f_bar), ft, pd)
    return Projection(dist, SliderState.from_array(x), u, psi_star)


def project_onto_cell(cell: TerminalSet, query: SliderState, weights=None) -> Projection:
    """Weighted-distance projection of query onto the cell."""
    w = DEFAULT_WEIGHTS if weights is None else np.asarray(weights, dtype=float)
    if cell.empty:
        raise InfeasibleCell(f"cell {cell.key} is empty")
    if cell.b_map is not None:
        return _project_generic(cell, query, w)
    q = query.as_array()
    g = cell._geo
    Mw = w[:3, None] * g["lin"]
    r = _pose_residual(cell.generating_state, q, w)
    try:
        y, _ = solve_qp(Mw.T @ Mw, -Mw.T @ r, g["G"], g["h"])
    except ValueError as e:
        raise InfeasibleCell(str(e)) from e
    return _finish(cell, y, q, w)


def _project_generic(cell: TerminalSet, query: SliderState, w) -> Projection:
    """Grid over the contact band with an exact input QP per point, then a bounded 1-D refinement."""
    model = cell.model
    P = mode_polytope(model, cell.mode)
    q = query.as_array()

    def inner(psi_c):
        base = cell._base(psi_c)
        r = w * np.array([q[0] - base[0], q[1] - base[1], wrap_angle(q[2] - base[2]), wrap_angle(q[3] - psi_c)])
        Mw = w[:, None] * (cell.tau * cell.b_map(psi_c))
        H = Mw.T @ Mw + 1e-14 * np.eye(3)
        u, obj = solve_qp(H, -Mw.T @ r, P.D, P.h)
        return float(r @ r) + 2.0 * obj, u

    lo, hi = cell.psi_band
    grid = np.linspace(lo, hi, GRID_POINTS)
    vals = [inner(p)[0] for p in grid]
    k = int(np.argmin(vals))
    best_psi = grid[k]
    if hi > lo:
        a, b = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
        res = minimize_scalar(lambda p: inner(p)[0], bounds=(a, b), method="bounded", options={"xatol": 1e-12})
        if res.fun < vals[k]:
            best_psi = float(res.x)
    d2, u = inner(best_psi)
    x = cell._base(best_psi) + cell.tau * cell.b_map(best_psi) @ u
    return Projection(math.sqrt(max(d2, 0.0)), SliderState.from_array(x), PusherInput.from_array(u), best_psi)


def with_input_map(cell: TerminalSet, b_map: Callable) -> TerminalSet:
    """Copy of a cell whose members are generated through an arbitrary psi -> B map."""
    return TerminalSet(
        cell.generating_state, cell.face_index, cell.mode, cell.B, cell.tau, cell.psi_band, cell.psi_range,
        cell.model, b_map, cell._geo,
    )


def projection_distances(cell: TerminalSet, queries, weights=None) -> np.ndarray:
    """Weighted distances from each row of queries (n, 4) to the cell."""
    w = DEFAULT_WEIGHTS if weights is None else np.asarray(weights, dtype=float)
    Q = np.atleast_2d(np.asarray(queries, dtype=float))
    if cell.b_map is not None:
        return np.array([_project_generic(cell, SliderState.from_array(q), w).distance for q in Q])
    g = cell._geo
    Mw = w[:3, None] * g["lin"]
    table = QpTable(Mw.T @ Mw, g["G"], g["h"])
    R = Q[:, :3] - g["x0"]
    R[:, 2] = wrap_array(R[:, 2])
    R *= w[:3]
    _, obj, ok = table.solve(-R @ Mw, idx=np.zeros(len(Q), dtype=int))
    if not np.all(ok):
        raise InfeasibleCell(f"cell {cell.key} has an empty input polytope")
    lo, hi = cell.psi_range
    mid = 0.5 * (lo + hi)
    qq = mid + wrap_array(Q[:, 3] - mid)
    gap = np.clip(qq, lo, hi) - qq
    d2 = np.einsum("ci,ci->c", R, R) + 2.0 * obj + (w[3] * gap) ** 2
    return np.sqrt(np.maximum(d2, 0.0))


def convexity_certificate(cell: TerminalSet, n_samples: int, seed=None, weights=None, tol: float = 1e-6) -> bool:
    """Check that random convex combinations of member states stay in the cell."""
    if n_samples < 2:
        raise ValueError("need at least two samples")
    rng = np.random.default_rng(seed)
    pts = cell.sample(rng, n_samples)
    xb = cell.generating_state.pose.theta
    pts[:, 2] = xb + wrap_array(pts[:, 2] - xb)
    i = rng.integers(0, n_samples, size=n_samples)
    j = rng.integers(0, n_samples, size=n_samples)
    lam = rng.uniform(size=n_samples)[:, None]
    Z = lam * pts[i] + (1.0 - lam) * pts[j]
    return bool(np.all(projection_distances(cell, Z, weights) <= tol))


class NearestResult(NamedTuple):
    x_near: SliderState
    x_gen: SliderState
    cell: tuple  # (face, mode, psi_star)
    distance: float
    u_star: PusherInput
    node: int
    terminal_set: TerminalSet


class ReachIndex:
    """Incremental store of reachable sets with lower-bound pruned nearest-neighbor search.

    All cells live in flat arrays grown by doubling; a compiled kernel scans
    nodes in order of their lower bound and stops once no node can win.
    """

    _FIELDS = ("P", "c", "valid", "G", "b", "Mw", "x0", "psi")

    def __init__(self, weights=None):
        self.weights = DEFAULT_WEIGHTS if weights is None else np.asarray(weights, dtype=float)
        self.sets: list[ReachableSet] = []
        self._n = 0
        self._k = 0  # cells per node
        self._store = {}
        self._centers = np.zeros((16, 3))
        self._radii = np.zeros(16)

    def __len__(self):
        return self._n

    def _grow(self, name, arr):
        cap_nodes = len(self._centers)
        full = self._store.get(name)
        shape = (cap_nodes * self._k,) + arr.shape[1:]
        if full is None or full.shape[0] < shape[0]:
            new = np.zeros(shape, dtype=arr.dtype)
            if full is not None:
                new[: full.shape[0]] = full
            self._store[name] = full = new
        lo = self._n * self._k
        full[lo : lo + len(arr)] = arr

    def add(self, rs: ReachableSet) -> int:
        if not np.array_equal(rs.weights, self.weights):
            raise ValueError("reachable set was built with different weights")
        k = len(rs.cells)
        if self._k == 0:
            self._k = k
        elif k != self._k:
            raise ValueError("all reachable sets must have the same number of cells")
        if self._n == len(self._centers):
            self._centers = np.vstack([self._centers, np.zeros_like(self._centers)])
            self._radii = np.concatenate([self._radii, np.zeros_like(self._radii)])
        p = rs.generating_state.pose
        self._centers[self._n] = (p.x, p.y, p.theta)
        self._radii[self._n] = rs.radius
        t = rs._table
        parts = {
            "P": t.P, "c": t.c, "valid": t.valid, "G": t.G, "b": t.b, "Mw": rs._Mw,
            "x0": np.array([c._geo["x0"] for c in rs.cells]),
            "psi": np.array([c.psi_range for c in rs.cells]),
        }
        for name in self._FIELDS:
            self._grow(name, parts[name])
        self.sets.append(rs)
        self._n += 1
        return self._n - 1

    def lower_bounds(self, q: np.ndarray) -> np.ndarray:
        w = self.weights
        d = q[:3] - self._centers[: self._n]
        d[:, 2] = wrap_array(d[:, 2])
        return np.maximum(0.0, np.linalg.norm(d * w[:3], axis=1) - self._radii[: self._n])

    def query(self, query: SliderState) -> NearestResult:
        if not self._n:
            raise EmptyTree("no reachable sets to search")
        q = query.as_array()
        lb = self.lower_bounds(q)
        order = np.lexsort((np.arange(len(lb)), lb))
        st = self._store
        d, node, k, y = _nn_kernel(order, lb, st["P"], st["c"], st["valid"], st["G"], st["b"], st["Mw"],
                                   st["x0"], st["psi"], q, self.weights, self._k)
        if node < 0:
            raise InfeasibleCell("no feasible cell in the tree")
        rs = self.sets[node]
        cell = rs.cells[k]
        pr = _finish(cell, y, q, self.weights)
        return NearestResult(pr.x_proj, rs.generating_state, (cell.face_index, cell.mode, pr.psi_star),
                             pr.distance, pr.u_star, node, cell)


@njit(cache=True)
def _wrap(a):
    w = (a + np.pi) % (2.0 * np.pi) - np.pi
    if w <= -np.pi:
        w += 2.0 * np.pi
    return w


@njit(cache=True)
def _nn_kernel(order, lb, P, c, valid, G, b, Mw, x0, psi, q, w, k):
    """Scan nodes by increasing lower bound; exact per-cell QP by tabulated active sets."""
    best_d = np.inf
    best_node = -1
    best_cell = -1
    best_y = np.zeros(3)
    n_sub = P.shape[1]
    m = G.shape[1]
    r = np.empty(3)
    g = np.empty(3)
    y = np.empty(3)
    for oi in range(order.shape[0]):
        node = order[oi]
        if lb[node] > best_d:
            break
        for kk in range(k):
            ci = node * k + kk
            lo = psi[ci, 0]
            hi = psi[ci, 1]
            if lo > hi:
                continue
            r[0] = (q[0] - x0[ci, 0]) * w[0]
            r[1] = (q[1] - x0[ci, 1]) * w[1]
            r[2] = _wrap(q[2] - x0[ci, 2]) * w[2]
            rr = r[0] * r[0] + r[1] * r[1] + r[2] * r[2]
            for i in range(3):
                g[i] = -(Mw[ci, 0, i] * r[0] + Mw[ci, 1, i] * r[1] + Mw[ci, 2, i] * r[2])
            mid = 0.5 * (lo + hi)
            qq = mid + _wrap(q[3] - mid)
            gap = min(max(qq, lo), hi) - qq
            psi2 = (w[3] * gap) ** 2
            cell_best = np.inf
            cy0 = 0.0
            cy1 = 0.0
            cy2 = 0.0
            for s in range(n_sub):
                if not valid[ci, s]:
                    continue
                for i in range(3):
                    y[i] = P[ci, s, i, 0] * g[0] + P[ci, s, i, 1] * g[1] + P[ci, s, i, 2] * g[2] + c[ci, s, i]
                feas = True
                for j in range(m):
                    if G[ci, j, 0] * y[0] + G[ci, j, 1] * y[1] + G[ci, j, 2] * y[2] - b[ci, j] > 1e-10:
                        feas = False
                        break
                if not feas:
                    continue
                res = 0.0
                for i in range(3):
                    e = Mw[ci, i, 0] * y[0] + Mw[ci, i, 1] * y[1] + Mw[ci, i, 2] * y[2] - r[i]
                    res += e * e
                if res < cell_best:
                    cell_best = res
                    cy0 = y[0]
                    cy1 = y[1]
                    cy2 = y[2]
            if cell_best == np.inf:
                continue
            d = np.sqrt(max(cell_best + psi2, 0.0))
            if d < best_d or (d == best_d and (node < best_node or (node == best_node and kk < best_cell))):
                best_d = d
                best_node = node
                best_cell = kk
                best_y[0] = cy0
                best_y[1] = cy1
                best_y[2] = cy2
    return best_d, best_node, best_cell, best_y


def nearest_neighbor(tree_sets, query: SliderState, weights=None) -> NearestResult:
    """Exact nearest projection over every cell of every reachable set."""
    tree_sets = list(tree_sets)
    if weights is None and tree_sets:
        weights = tree_sets[0].weights
    idx = ReachIndex(weights)
    for rs in tree_sets:
        idx.add(rs)
    return idx.query(query)
