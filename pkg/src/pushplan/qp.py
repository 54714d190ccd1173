"""Exact active-set enumeration for tiny dense QPs.

    min 1/2 y'Hy + g'y  s.t.  G y <= b

For n unknowns and m rows every linearly independent active subset of size <= n
is tried; the best primal-feasible KKT point is the optimum (the optimum always
admits multipliers supported on an independent subset). H and G are fixed per
problem so the KKT inverses are tabulated once and each new g costs a few
matrix-vector products. Problems are batched along a leading axis.
"""

from __future__ import annotations

from functools import lru_cache
from itertools import combinations

import numpy as np

FEAS_TOL = 1e-10


@lru_cache(maxsize=None)
def active_subsets(m: int, n: int) -> tuple:
    return tuple(s for k in range(min(m, n) + 1) for s in combinations(range(m), k))


class QpTable:
    """Tabulated KKT solutions y_S(g) = P_S g + c_S for a batch of C problems."""

    def __init__(self, H, G, b):
        H = np.asarray(H, dtype=float)
        G = np.asarray(G, dtype=float)
        b = np.asarray(b, dtype=float)
        if H.ndim == 2:
            H, G, b = H[None], G[None], b[None]
        C, n, _ = H.shape
        m = G.shape[1]
        # unit rows so one feasibility tolerance fits all constraints
        norms = np.linalg.norm(G, axis=2, keepdims=True)
        norms[norms == 0] = 1.0
        G = G / norms
        b = b / norms[..., 0]
        tr = np.trace(H, axis1=1, axis2=2)
        ridge = np.where(tr > 0, 1e-14 * tr, 1.0)
        Hr = H + ridge[:, None, None] * np.eye(n)
        subsets = active_subsets(m, n)
        S = len(subsets)
        P = np.zeros((C, S, n, n))
        c = np.zeros((C, S, n))
        valid = np.zeros((C, S), dtype=bool)
        # one batched inversion per active-set size
        for k in range(min(m, n) + 1):
            ids = [i for i, sub in enumerate(subsets) if len(sub) == k]
            if k == 0:
                P[:, ids[0]] = -np.linalg.inv(Hr)
                valid[:, ids[0]] = True
                continue
            rows = np.array([subsets[i] for i in ids])  # (Sk, k)
            Gs = G[:, rows, :]  # (C, Sk, k, n)
            gram = Gs @ Gs.swapaxes(-1, -2)
            ok = np.linalg.det(gram) > 1e-10
            K = np.zeros((C, len(ids), n + k, n + k))
            K[..., :n, :n] = Hr[:, None]
            K[..., :n, n:] = Gs.swapaxes(-1, -2)
            K[..., n:, :n] = Gs
            K[~ok] = np.eye(n + k)
            Ki = np.linalg.inv(K)
            P[:, ids] = -Ki[..., :n, :n]
            c[:, ids] = np.einsum("csij,csj->csi", Ki[..., :n, n:], b[:, rows])
            valid[:, ids] = ok
        self.H, self.G, self.b = H, G, b
        self.P, self.c, self.valid = P, c, valid
        self.n_problems = C

    def solve(self, g, idx=None, tol: float = FEAS_TOL):
        """Minimizers for linear terms g (C, n). Returns (y, objective, feasible)."""
        P, c, valid, H, G, b = self.P, self.c, self.valid, self.H, self.G, self.b
        if idx is not None:
            P, c, valid, H, G, b = P[idx], c[idx], valid[idx], H[idx], G[idx], b[idx]
        g = np.asarray(g, dtype=float)
        if g.ndim == 1:
            g = np.broadcast_to(g, (P.shape[0], g.shape[0]))
        Y = (P * g[:, None, None, :]).sum(-1) + c
        viol = (G[:, None, :, :] * Y[:, :, None, :]).sum(-1) - b[:, None, :]
        feas = valid & np.all(viol <= tol, axis=2)
        HY = (H[:, None, :, :] * Y[:, :, None, :]).sum(-1)
        obj = ((0.5 * HY + g[:, None, :]) * Y).sum(-1)
        obj = np.where(feas, obj, np.inf)
        best = np.argmin(obj, axis=1)
        r = np.arange(P.shape[0])
        return Y[r, best], obj[r, best], np.isfinite(obj[r, best])


def solve_qp(H, g, G, b):
    """Single small QP. Returns (y, objective); raises ValueError if infeasible."""
    y, obj, ok = QpTable(H, G, b).solve(np.asarray(g, dtype=float)[None])
    if not ok[0]:
        raise ValueError("QP is infeasible")
    return y[0], float(obj[0])


def project_polytope(u, D, h, metric=None):
    """Closest point of {D v <= h} to u in the norm ||L (v - u)|| with L = diag(metric)."""
    u = np.asarray(u, dtype=float)
    L = np.ones_like(u) if metric is None else np.asarray(metric, dtype=float)
    H = np.diag(L**2)
    y, _ = solve_qp(H, -H @ u, D, h)
    return y
