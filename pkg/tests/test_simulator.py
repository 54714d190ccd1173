import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pushplan.dynamics import PusherInput, SliderState, rollout
from pushplan.geom2d import Pose2, wrap_array
from pushplan.harness.generators import CUBE_SIZE, SLIDER_SIZE, block, cube, generate_scene, reference_slider
from pushplan.planner import PlanParams, plan
from pushplan.simulator import (
    LOG_HEADER,
    NO_DISTURBANCE,
    DisturbanceSchedule,
    Plant,
    WorldState,
    replay_plan,
    run_episode,
    step,
)

X0 = SliderState.of(0.0, 0.0, 0.0, math.pi)


def test_zero_input_is_still(slider):
    w = WorldState(X0)
    for _ in range(10):
        w = step(w, slider, PusherInput(0, 0, 0), 0.04)
    np.testing.assert_array_equal(w.slider.as_array(), X0.as_array())
    assert w.time == pytest.approx(0.4) and not w.faulted


def test_step_validation(slider):
    w = WorldState(X0)
    with pytest.raises(ValueError):
        step(w, slider, PusherInput(0, 0, 0), 0.0)
    with pytest.raises(ValueError):
        step(w, slider, PusherInput(0, 0, 0), 0.1)
    with pytest.raises(ValueError):
        step(w, slider, PusherInput(0, 0, 0), 0.04, integrator="rk45")
    with pytest.raises(ValueError):
        DisturbanceSchedule(((1.0, 0.5, np.zeros(4)),))


def test_disturbance_drift(slider):
    sched = DisturbanceSchedule(((0.0, 1.0, [0.01, 0, 0, 0.3]),))
    plant = Plant(slider, WorldState(X0), schedule=sched)
    log = run_episode(plant, [], 2.0)
    # 1 cm over the active second, nothing after; psi_c is never disturbed
    assert log.states[-1].pose.x == pytest.approx(0.01, abs=1e-12)
    assert log.states[-1].psi_c == pytest.approx(math.pi)
    assert NO_DISTURBANCE(0.5).sum() == 0.0


def test_force_disturbance_uses_limit_matrix(slider):
    s = DisturbanceSchedule.force(slider, 0.0, 1.0, [0.1, 0.0])
    np.testing.assert_allclose(s(0.5)[:2], [0.1 * slider.A[0, 0], 0.0])
    assert s(1.0).sum() == 0.0


def test_matches_nominal_rollout(slider):
    u = PusherInput(0.12, 0.01, 0.0)
    plant = Plant(slider, WorldState(X0), integrator="rk2")
    log = run_episode(plant, [u] * 25, 1.0, dt=0.01)
    ref = rollout(slider, X0, [u] * 25, 0.01)
    # a second-order step against RK4 over a slow rotation
    np.testing.assert_allclose(log.as_array()[-1], ref[-1].as_array(), atol=1e-6)


def test_cube_push_at_half_speed(slider):
    """A cube of the same limit surface pushed head on: both share the pusher's motion."""
    gap = (SLIDER_SIZE[0] + CUBE_SIZE[0]) / 2
    c = cube(Pose2(gap + 5e-4, 0.0, 0.0))
    plant = Plant(slider, WorldState(X0, (c.pose,)), movables=[c.model])
    log = run_episode(plant, [PusherInput(0.15, 0, 0)] * 50, 1.0, dt=0.02)
    assert not log.fault
    free = 0.15 * slider.A[0, 0] * 1.0
    dx_s = log.states[-1].pose.x
    dx_c = log.movables[-1][0].x - c.pose.x
    assert any(log.contact)
    # the reaction slows the slider; the cube moves with it
    assert dx_s < free
    assert dx_c == pytest.approx(dx_s - 5e-4, abs=2e-3)
    assert dx_s == pytest.approx(free / 2, rel=0.1)


def test_fixed_contact_faults(slider):
    w = block(0.05, 0.1, -0.2, 0.2)
    plant = Plant(slider, WorldState(X0), fixed=[(w.model, w.pose)])
    log = run_episode(plant, [PusherInput(0.15, 0, 0)] * 100, 4.0)
    assert log.fault == "fixed-contact"
    assert log.fault_time < 4.0
    # a faulted world no longer moves
    w0 = plant.world
    assert step(w0, slider, PusherInput(0.15, 0, 0), 0.04) is w0


def test_face_fault(slider):
    lo, hi, _ = slider.face_interval(slider.face_of(math.pi))
    plant = Plant(slider, WorldState(SliderState.of(0, 0, 0, hi - 0.01)))
    log = run_episode(plant, [PusherInput(0.1, -0.02, 1.0)] * 20, 0.8)
    assert log.fault == "face"


def test_replace_pusher(slider):
    plant = Plant(slider, WorldState(X0))
    plant.replace_pusher(0.0)
    assert plant.world.slider.psi_c == 0.0
    assert plant.world.slider.pose == X0.pose


@pytest.fixture(scope="module")
def avoidance_plan():
    sc = generate_scene(4, 0)
    return sc, plan(sc.task(PlanParams(seed=0)))


def test_replay_matches_plan(avoidance_plan):
    sc, r = avoidance_plan
    assert r.success
    log = replay_plan(Plant.from_scene(sc), r)
    assert not log.fault
    X = log.as_array()
    assert len(X) == len(r.states)
    ids = list(r.node_steps)
    assert np.linalg.norm(X[ids, :2] - r.states[ids, :2], axis=1).max() <= 5e-3
    assert np.abs(wrap_array(X[ids, 2] - r.states[ids, 2])).max() <= 0.05


def test_episode_log_csv(tmp_path, avoidance_plan):
    sc, r = avoidance_plan
    log = replay_plan(Plant.from_scene(sc), r)
    path = tmp_path / "log.csv"
    log.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert tuple(rows[0]) == LOG_HEADER
    assert len(rows) == len(log.states) + 1
    # deterministic
    path2 = tmp_path / "log2.csv"
    replay_plan(Plant.from_scene(sc), r).to_csv(path2)
    assert open(path).read() == open(path2).read()


@given(st.floats(0.0, 0.15), st.floats(-1.0, 1.0), st.floats(-0.5, 0.5))
def test_speed_bound(fn, ft_frac, theta):
    m = reference_slider()
    u = PusherInput(fn, ft_frac * m.mu_p * fn, 0.0)
    w = step(WorldState(SliderState.of(0, 0, theta, math.pi)), m, u, 0.04)
    v = math.hypot(w.slider.pose.x, w.slider.pose.y) / 0.04
    lim = np.linalg.norm(m.A[:2, :2], 2) * m.f_bar * math.hypot(1, m.mu_p)
    assert v <= lim + 1e-12
