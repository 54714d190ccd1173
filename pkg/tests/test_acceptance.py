"""Acceptance criteria, one test each. Every test prints a single PASS/FAIL line with its numbers."""

import math
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy.spatial import ConvexHull

from pushplan.connect import LqrConfig, connect, weighted_distance
from pushplan.control import MpcConfig, observer_update, track
from pushplan.dynamics import MODES, FaceExit, PusherInput, SliderModel, SliderState, eval_dynamics, linearize, rollout
from pushplan.geom2d import ConvexPolygon, Pose2, polygon_collide, rot2
from pushplan.harness.bench import bench
from pushplan.harness.generators import cube, generate_scene, reference_slider
from pushplan.interaction import LCP_TOL, simulate_interaction, solve_lcp
from pushplan.planner import PlanParams, plan
from pushplan.reachset import _sample_inputs, build_reachable_set, convexity_certificate, nearest_neighbor, projection_distances
from pushplan.simulator import DisturbanceSchedule, Plant, WorldState

from conftest import random_state
from oracles import friction_net, lcp_pieces
from test_control import straight_plan
from test_dynamics import rk4_halving_ratio
from test_interaction import random_lcp

pytestmark = pytest.mark.acceptance


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail

    return emit


def random_model(rng):
    if rng.uniform() < 0.5:
        poly = ConvexPolygon.rectangle(*rng.uniform(0.04, 0.2, 2))
    else:
        pts = rng.normal(size=(12, 2)) * rng.uniform(0.03, 0.1)
        hull = pts[ConvexHull(pts).vertices]
        poly = ConvexPolygon.from_points(hull)
    return SliderModel.from_footprint(poly, rng.uniform(0.05, 0.8), rng.uniform(0.05, 0.5), rng.uniform(0.2, 3.0))


def _state_on_face(model, rng):
    """A random state whose contact azimuth avoids the vertices."""
    while True:
        face = int(rng.integers(model.n_faces))
        lo, hi, _ = model.face_interval(face)
        if hi - lo > 1e-3:
            return random_state(model, rng, face)


def test_c1_convexity(report):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    ok = resid = cells = 0
    for _ in range(100):
        m = random_model(rng)
        rs = build_reachable_set(m, _state_on_face(m, rng), 0.05)
        for c in rs.cells:
            cells += 1
            ok += convexity_certificate(c, 200, seed=int(rng.integers(1 << 31)))
            resid = max(resid, float(projection_distances(c, c.sample(rng, 200)).max()))
    dt = time.perf_counter() - t0
    report(1, ok == cells and resid <= 1e-6 and dt < 30,
           f"{ok}/{cells} cells convex, max member residual {resid:.1e}, {dt:.1f} s (limit 30 s)")


def test_c2_lcp_oracle(report):
    rng = np.random.default_rng(102)
    t0 = time.perf_counter()
    worst_gap = worst_res = 0.0
    methods = {}
    for _ in range(200):
        lcp = random_lcp(rng)
        sol = solve_lcp(lcp)
        methods[sol.method] = methods.get(sol.method, 0) + 1
        refs = lcp_pieces(lcp.M_lcp, lcp.q)
        gap = min(np.max(np.abs(friction_net(sol.w) - friction_net(r))) for r in refs) if refs else math.inf
        worst_gap = max(worst_gap, gap)
        worst_res = max(worst_res, sol.residual())
    dt = time.perf_counter() - t0
    report(2, worst_gap <= 1e-7 and worst_res <= LCP_TOL and dt < 10,
           f"max gap to enumeration {worst_gap:.1e}, max residual {worst_res:.1e}, methods {methods}, {dt:.1f} s")


def test_c3_non_penetration(report):
    rng = np.random.default_rng(103)
    slider = reference_slider()
    t0 = time.perf_counter()
    worst = 0.0
    infeasible = 0
    for _ in range(100):
        c = cube(Pose2(0.0, 0.0, rng.uniform(-math.pi, math.pi)))
        th = rng.uniform(-math.pi, math.pi)
        heading = rng.uniform(-math.pi, math.pi)
        d = np.array([math.cos(th), math.sin(th)])
        # back the slider off along -d until it just clears the cube
        r = 0.0
        while polygon_collide(slider.footprint, Pose2(*(-r * d), heading), c.model.footprint, c.pose).in_contact:
            r += 5e-4
        start = -r * d
        speed = rng.uniform(0.02, 0.11)
        v = speed * (d + rng.normal(size=2) * 0.2)
        traj = [SliderState.of(*(start + v * t), heading, math.pi) for t in np.linspace(0.0, 0.05, 6)]
        res = simulate_interaction(traj, [None] * 5, [(c.model, c.pose)], [], slider, 0.01)
        if not res.feasible:
            infeasible += 1
            continue
        end = Pose2(*traj[-1].as_array()[:3])
        worst = max(worst, polygon_collide(slider.footprint, end, c.model.footprint, res.movable_poses[0]).depth)
    dt = time.perf_counter() - t0
    report(3, worst <= 1e-3 and infeasible == 0 and dt < 10,
           f"max depth {worst * 1e3:.3f} mm over {100 - infeasible} pushes ({infeasible} rejected), {dt:.1f} s")


def test_c4_dynamics(report):
    m = reference_slider()
    rng = np.random.default_rng(104)
    eq = fd = 0.0
    for _ in range(200):
        x = random_state(m, rng)
        u = PusherInput.from_array(_sample_inputs(m, MODES[rng.integers(3)], rng, 1)[0])
        r = eval_dynamics(m, x, u)
        a = rng.uniform(-3, 3)
        rd = eval_dynamics(m, SliderState.of(x.pose.x, x.pose.y, x.pose.theta + a, x.psi_c), u)
        eq = max(eq, np.max(np.abs(rd[:2] - rot2(a) @ r[:2])), np.max(np.abs(rd[2:] - r[2:])))
        B = linearize(m, x)
        h = 1e-6
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            num = (eval_dynamics(m, x, PusherInput.from_array(u.as_array() + e))
                   - eval_dynamics(m, x, PusherInput.from_array(u.as_array() - e))) / (2 * h)
            fd = max(fd, np.max(np.abs(num - B[:, j])))
    ratios = [rk4_halving_ratio(m, rng) for _ in range(20)]
    ok = eq <= 1e-12 and fd <= 1e-6 and all(12 <= q <= 20 for q in ratios)
    report(4, ok, f"equivariance {eq:.1e}, finite-difference {fd:.1e}, "
                  f"RK4 ratios [{min(ratios):.2f}, {max(ratios):.2f}]")


def test_c5_lqr_connection(report):
    m = reference_slider()
    cfg = LqrConfig()
    rng = np.random.default_rng(105)
    dec = reached = 0
    for _ in range(500):
        x = random_state(m, rng)
        rs = build_reachable_set(m, x, cfg.tau)
        cell = rs.cells[rng.integers(len(rs.cells))]
        nn = nearest_neighbor([rs], SliderState.from_array(cell.sample(rng, 1)[0]))
        try:
            res = connect(m, x, nn.x_near, nn.cell, cfg)
            dec += weighted_distance(res.x_term, nn.x_near) < weighted_distance(x, nn.x_near)
        except FaceExit:
            pass  # no terminal state: counted as a failure
        mode = MODES[rng.integers(3)]
        u = PusherInput.from_array(_sample_inputs(m, mode, rng, 1)[0])
        try:
            end = rollout(m, x, [u] * cfg.horizon, cfg.tau_lqr)[-1]
            reached += connect(m, x, end, (m.face_of(x.psi_c), mode, x.psi_c), cfg).reached
        except FaceExit:
            pass
    report(5, dec >= 495 and reached >= 475,
           f"distance decreased {dec}/500 (need 495), rollout endpoints reached {reached}/500 (need 475)")


@pytest.mark.slow
def test_c6_contact_aware_feasibility(report):
    t0 = time.perf_counter()
    seeds = range(20)
    rep = bench([0, 1], seeds, PlanParams(n_max=1000), ablation=True)
    rep4 = bench([4], seeds, PlanParams(n_max=1000))
    dt = time.perf_counter() - t0

    def rate(fam, arm):
        ts = [t for t in rep.trials + rep4.trials if t.family == fam and t.arm == arm]
        assert ts
        return sum(t.success for t in ts) / len(ts)

    r = {k: rate(*k) for k in [(4, "ca3p"), (0, "ca3p"), (1, "ca3p"), (0, "no-contact"), (1, "no-contact")]}
    ok = (r[4, "ca3p"] >= 0.9 and r[0, "ca3p"] >= 0.7 and r[1, "ca3p"] >= 0.7
          and r[0, "no-contact"] == 0 and r[1, "no-contact"] == 0 and dt < 900)
    report(6, ok, "success " + ", ".join(f"f{f}/{a} {v:.0%}" for (f, a), v in r.items()) + f", {dt / 60:.1f} min")


@pytest.mark.slow
def test_c7_path_length(report):
    rep = bench([2, 3], range(20), PlanParams(n_max=1000))
    parts, ok = [], True
    for fam in (2, 3):
        ts = rep.select(fam)
        lengths = [t.path_length_m for t in ts]  # failures carry the censored length
        q1, med, q3 = np.percentile(lengths, [25, 50, 75])
        bound = float(np.median([t.straight_m + t.detour_lb_m for t in ts]))
        ok &= med <= 1.2 * bound and (q3 - q1) <= 0.5 * med
        parts.append(f"f{fam} median {med:.3f} m vs 1.2 x {bound:.3f} = {1.2 * bound:.3f} m "
                     f"(ratio {med / bound:.2f}), IQR {q3 - q1:.3f} m, "
                     f"success {sum(t.success for t in ts)}/{len(ts)}")
    report(7, ok, "; ".join(parts))


def _window_max(log, t0, t1):
    t = np.array(log.times)
    e = log.error_norm
    sel = (t >= t0) & (t < t1)
    return float(e[sel].max()) if sel.any() else math.nan


@pytest.mark.slow
def test_c8_tracking_and_observer(report):
    t_start = time.perf_counter()
    T0, T1 = 1.0, 3.0
    force = (-0.1, 0.0)  # against the direction of travel
    parts, ok = [], True
    for seed in (0, 1):
        sc = generate_scene(4, seed)
        res = plan(sc.task(PlanParams(seed=seed)))
        base = track(sc.slider, res, Plant.from_scene(sc), MpcConfig())
        integ = {}
        for obs in (True, False):
            sched = DisturbanceSchedule.force(sc.slider, T0, T1, force)
            log = track(sc.slider, res, Plant.from_scene(sc), MpcConfig(observer=obs), sched)
            integ[obs] = log.integrated_error()
            if obs:
                during = _window_max(log, T0, T1)
                after = _window_max(log, T1 + 1.0, math.inf)
                faults = log.fault or base.fault
        e0 = float(base.error_norm.max())
        ok &= e0 <= 5e-3 and during <= 0.03 and after < 5e-3 and integ[True] < integ[False] and not faults
        parts.append(f"seed {seed}: zero-dist max {e0 * 1e3:.1f} mm, during {during * 1e2:.2f} cm, "
                     f"1 s after {after * 1e3:.1f} mm, integrated {integ[True]:.4f} vs {integ[False]:.4f} m s"
                     + (f", fault {faults}" if faults else ""))
    dt = time.perf_counter() - t_start
    ok &= dt < 120
    report(8, ok, "; ".join(parts) + f"; {dt:.0f} s")


def _first_within(est, d_true, frac=0.05):
    err = np.linalg.norm(np.asarray(est) - d_true, axis=1) / np.linalg.norm(d_true)
    hit = np.flatnonzero(err <= frac)
    return int(hit[0]) + 1 if len(hit) else 10**9


def test_c9_observer_convergence(report):
    cfg = MpcConfig()
    assert cfg.kappa_d == 5.0 and cfg.tau_mpc == 0.04
    rng = np.random.default_rng(109)
    # the bare recursion against an open-loop plant
    worst_open = 0
    for _ in range(20):
        d_true = np.append(rng.normal(size=3) * [0.01, 0.01, 0.05], 0.0)
        x = SliderState.from_array(np.append(rng.normal(size=3) * 0.1, math.pi))
        d, est = np.zeros(4), []
        for _ in range(100):
            x_pred = SliderState.from_array(x.as_array() + cfg.tau_mpc * d)
            x = SliderState.from_array(x.as_array() + cfg.tau_mpc * d_true)
            d = observer_update(d, x, x_pred, cfg.kappa_d, cfg.tau_mpc).d_hat
            est.append(d)
        worst_open = max(worst_open, _first_within(est, d_true))
    # inside the tracking loop, with the controller acting on the estimate
    m = reference_slider()
    p = straight_plan(m, 0.3)
    worst_closed = 0
    for d_true in ([0, 0.004, 0, 0], [0.003, 0, 0, 0], [0, -0.003, 0.02, 0], [0.002, 0.002, -0.03, 0]):
        d_true = np.array(d_true, dtype=float)
        plant = Plant(m, WorldState(SliderState.of(0, 0, 0, math.pi)),
                      schedule=DisturbanceSchedule(((0.0, math.inf, d_true),)))
        log = track(m, p, plant, cfg)
        worst_closed = max(worst_closed, _first_within(log.d_hat, d_true))
    report(9, max(worst_open, worst_closed) <= 100,
           f"within 5% after at most {worst_open} steps open loop, {worst_closed} steps in closed loop (limit 100)")


def _cli(*args, cwd):
    return subprocess.run([sys.executable, "-m", "pushplan.harness.cli", *args], cwd=cwd,
                          capture_output=True, text=True)


@pytest.mark.slow
def test_c10_determinism(report, tmp_path):
    outs = []
    for run in ("a", "b"):
        d = tmp_path / run
        d.mkdir()
        p = _cli("plan", "--family", "0", "--seed", "3", "--out", str(d / "plan.csv"), cwd=d)
        b = _cli("bench", "--families", "0", "4", "--seeds", "2", "--n-max", "300", "--out", str(d / "bench"),
                 "--jobs", "2", cwd=d)
        assert p.returncode in (0, 2) and b.returncode == 0, (p.stderr, b.stderr)
        outs.append(((d / "plan.csv").read_bytes(), (d / "bench" / "bench_nowall.csv").read_bytes()))
    same_plan = outs[0][0] == outs[1][0]
    same_bench = outs[0][1] == outs[1][1]
    report(10, same_plan and same_bench,
           f"plan CSV identical: {same_plan}, bench CSV (wall time excluded) identical: {same_bench}")
