import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pushplan.dynamics import MODES, ContactMode, PusherInput, SliderState, rollout
from pushplan.harness.generators import reference_slider
from pushplan.reachset import (
    DEFAULT_WEIGHTS,
    EmptyTree,
    ReachIndex,
    build_reachable_set,
    convexity_certificate,
    nearest_neighbor,
    project_onto_cell,
    projection_distances,
    with_input_map,
)

from conftest import random_state
from oracles import grid_cell_distance

TAU = 0.05
W = DEFAULT_WEIGHTS


def _cell(rs, face, mode):
    return next(c for c in rs.cells if c.face_index == face and c.mode is mode)


def test_cell_count_and_band(unit_square, slider):
    rs = build_reachable_set(unit_square, SliderState.of(0, 0, 0, math.pi), TAU)
    assert len(rs.cells) == 12
    x = SliderState.of(0, 0, 0, math.pi)
    rs = build_reachable_set(slider, x, TAU)
    face = slider.face_of(x.psi_c)
    lo, hi = _cell(rs, face, ContactMode.STICKING).psi_band
    # tau * psi_dot_bar on each side of the current contact
    assert hi - lo == pytest.approx(2 * TAU * slider.psi_dot_bar)


def test_generating_state_is_member(slider):
    x = SliderState.of(0.1, 0.2, 0.4, math.pi + 0.1)
    rs = build_reachable_set(slider, x, TAU)
    face = slider.face_of(x.psi_c)
    pr = project_onto_cell(_cell(rs, face, ContactMode.STICKING), x)
    assert pr.distance == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(pr.u_star.as_array()[:2], 0.0, atol=1e-12)
    nn = nearest_neighbor([rs], x)
    assert nn.distance == pytest.approx(0.0, abs=1e-12) and nn.node == 0


def test_axis_aligned_inversion(slider):
    x = SliderState.of(0, 0, 0, math.pi)
    rs = build_reachable_set(slider, x, TAU)
    a1 = slider.A[0, 0]
    q = SliderState.of(TAU * a1 * slider.f_bar / 2, 0, 0, math.pi)
    pr = project_onto_cell(_cell(rs, slider.face_of(math.pi), ContactMode.STICKING), q)
    assert pr.distance == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(pr.u_star.as_array(), [slider.f_bar / 2, 0, 0], atol=1e-12)


def test_backward_query_matches_grid(slider):
    x = SliderState.of(0, 0, 0, math.pi)
    rs = build_reachable_set(slider, x, TAU)
    q = SliderState.of(-0.01, 0.002, 0.0, math.pi)
    for mode in MODES:
        cell = _cell(rs, slider.face_of(math.pi), mode)
        pr = project_onto_cell(cell, q)
        grid = grid_cell_distance(cell, q.as_array(), W, n=50)
        assert pr.distance > 0
        assert pr.distance <= grid + 1e-12
        assert abs(pr.distance - grid) <= 0.02 * grid
    # the best input pushes nothing, which is on the f_n >= 0 boundary
    pr = project_onto_cell(_cell(rs, slider.face_of(math.pi), ContactMode.STICKING), q)
    assert pr.u_star.f_n == pytest.approx(0.0, abs=1e-12)


@given(st.integers(0, 100_000))
def test_members_project_to_zero(seed):
    m = reference_slider()
    rng = np.random.default_rng(seed)
    rs = build_reachable_set(m, random_state(m, rng), TAU)
    cell = rs.cells[seed % len(rs.cells)]
    pts = cell.sample(rng, 20)
    assert np.all(projection_distances(cell, pts) <= 1e-6)


@given(st.integers(0, 100_000))
def test_projection_is_exact_against_grid(seed):
    m = reference_slider()
    rng = np.random.default_rng(seed)
    x = random_state(m, rng)
    rs = build_reachable_set(m, x, TAU)
    cell = rs.cells[seed % len(rs.cells)]
    q = x.as_array() + rng.normal(scale=[0.01, 0.01, 0.1, 0.1])
    d = projection_distances(cell, q[None])[0]
    g = grid_cell_distance(cell, q, W, n=12)
    assert d <= g + 1e-9  # the grid only holds members


def test_convexity_small():
    m = reference_slider()
    rng = np.random.default_rng(7)
    for _ in range(5):
        rs = build_reachable_set(m, random_state(m, rng), TAU)
        for c in rs.cells:
            assert convexity_certificate(c, 200, seed=int(rng.integers(1 << 30)))


def test_convexity_degenerate_cell(slider):
    rs = build_reachable_set(slider, SliderState.of(0, 0, 0, math.pi), 0.0)
    assert all(convexity_certificate(c, 20, seed=0) for c in rs.cells)


def test_corrupted_cell_fails_certificate(slider):
    """A psi -> B map that drops the normal-force column on half the band is not convex."""
    from pushplan.dynamics import input_matrix

    x = SliderState.of(0, 0, 0, math.pi)
    rs = build_reachable_set(slider, x, TAU)
    face = slider.face_of(math.pi)
    cell = _cell(rs, face, ContactMode.STICKING)
    mid = 0.5 * sum(cell.psi_band)

    def broken(psi):
        B = input_matrix(slider, 0.0, psi, face)
        if psi > mid:
            B = B.copy()
            B[:, 0] = 0.0
        return B

    bad = with_input_map(cell, broken)
    results = [convexity_certificate(bad, 40, seed=s) for s in range(3)]
    assert not all(results)


def test_nearest_two_nodes(slider):
    a = SliderState.of(0, 0, 0, math.pi)
    b = SliderState.of(0.3, 0.3, 1.0, math.pi)
    rs = [build_reachable_set(slider, s, TAU) for s in (a, b)]
    end = rollout(slider, b, [PusherInput(0.1, 0.01, 0.0)] * 5, 0.01)[-1]
    nn = nearest_neighbor(rs, end)
    assert nn.node == 1
    assert nn.distance < 1e-3


def test_nearest_empty():
    with pytest.raises(EmptyTree):
        nearest_neighbor([], SliderState.of(0, 0, 0, 1.0))
    with pytest.raises(EmptyTree):
        ReachIndex().query(SliderState.of(0, 0, 0, 1.0))


def test_nearest_against_grid_oracle(slider):
    rng = np.random.default_rng(11)
    # nodes packed close together so the search has real competition
    nodes = [random_state(slider, rng) for _ in range(20)]
    nodes = [SliderState.of(0.1 * s.pose.x, 0.1 * s.pose.y, s.pose.theta, s.psi_c) for s in nodes]
    sets = [build_reachable_set(slider, s, TAU) for s in nodes]
    idx = ReachIndex()
    for r in sets:
        idx.add(r)
    agree = 0
    for _ in range(100):
        q = SliderState.of(*rng.uniform(-0.03, 0.03, 2), rng.uniform(-math.pi, math.pi), rng.uniform(-math.pi, math.pi))
        nn = idx.query(q)
        grid = [min(grid_cell_distance(c, q.as_array(), W, n=8) for c in r.cells) for r in sets]
        win = int(np.argmin(grid))
        if win == nn.node:
            agree += 1
        else:
            assert grid[nn.node] - grid[win] < 1e-3
        # exact search never loses to the grid
        assert nn.distance <= min(grid) + 1e-9
    assert agree >= 95


def test_index_matches_brute_force(slider):
    rng = np.random.default_rng(12)
    sets = [build_reachable_set(slider, random_state(slider, rng), TAU) for _ in range(15)]
    idx = ReachIndex()
    for r in sets:
        idx.add(r)
    for _ in range(30):
        q = random_state(slider, rng)
        nn = idx.query(q)
        brute = min(min(projection_distances(c, q.as_array()[None])[0] for c in r.cells) for r in sets)
        assert nn.distance == pytest.approx(brute, abs=1e-9)
        assert projection_distances(nn.terminal_set, nn.x_near.as_array()[None])[0] <= 1e-7
        assert nn.terminal_set.face_index == nn.cell[0] and nn.terminal_set.mode is nn.cell[1]


def test_metric_dominance(slider):
    rng = np.random.default_rng(13)
    for _ in range(50):
        x = random_state(slider, rng)
        rs = build_reachable_set(slider, x, TAU)
        q = random_state(slider, rng)
        nn = nearest_neighbor([rs], q)
        d = W * (q.as_array() - x.as_array())
        d[2:] = W[2:] * np.array([math.remainder(q.as_array()[i] - x.as_array()[i], 2 * math.pi) for i in (2, 3)])
        assert nn.distance <= np.linalg.norm(d) + rs.radius + 1e-9
