"""Parametric desk-scale scene families.

0, 1  clearance required: a wall splits the workspace and the only gap is
      plugged by a movable cube; the space left beside the cube is narrower
      than the slider's short edge.
2, 3  accelerable: the direct route runs through a cube, a longer route exists
      around it.
4     avoidance only: fixed blocks leave one free gap, no movables.

Seeds jitter poses by a few millimetres; every generated scene is validated.
"""

from __future__ import annotations

import math

import numpy as np

from ..connect import GoalRegion
from ..dynamics import SliderModel, SliderState
from ..geom2d import ConvexPolygon, Pose2
from ..interaction import ObstacleModel
from .scene import Fixed, Movable, Scene, validate

FAMILIES = (0, 1, 2, 3, 4)

SLIDER_SIZE = (0.08, 0.15)  # m, x-extent by y-extent in the body frame
CUBE_SIZE = (0.07, 0.122)
MU_P = 0.2
MU_CUBE = 0.3
F_BAR = 0.15
PSI_DOT_BAR = 1.0
PSI_BAR_LONG, PSI_BAR_SHORT = 0.9, 0.52
GOAL_TOL = (0.02, 0.02, 0.2)
WALL = 0.06  # divider thickness


def reference_slider(mu_p: float = MU_P, f_bar: float = F_BAR, psi_dot_bar: float = PSI_DOT_BAR) -> SliderModel:
    # faces 0 and 2 are the long (0.15 m) edges
    poly = ConvexPolygon.rectangle(*SLIDER_SIZE)
    return SliderModel.from_footprint(poly, mu_p, f_bar, psi_dot_bar,
                                      psi_bar=(PSI_BAR_LONG, PSI_BAR_SHORT, PSI_BAR_LONG, PSI_BAR_SHORT))


def cube(pose: Pose2, mu: float = MU_CUBE) -> Movable:
    return Movable(ObstacleModel.from_footprint(ConvexPolygon.rectangle(*CUBE_SIZE), mu), pose)


def block(x0: float, x1: float, y0: float, y1: float) -> Fixed:
    return Fixed(ConvexPolygon.rectangle(x1 - x0, y1 - y0), Pose2(0.5 * (x0 + x1), 0.5 * (y0 + y1), 0.0))


def divider(x: float, gaps, y_lo: float = -0.3, y_hi: float = 0.9) -> list:
    """Wall of thickness WALL centered at x, open on the (lo, hi) intervals in gaps."""
    out, y = [], y_lo
    for lo, hi in sorted(gaps):
        out.append(block(x - WALL / 2, x + WALL / 2, y, lo))
        y = hi
    out.append(block(x - WALL / 2, x + WALL / 2, y, y_hi))
    return out


def _start(x, y) -> SliderState:
    # pusher on the -x long face, pushing toward +x
    return SliderState.of(x, y, 0.0, math.pi)


def _family0(j):
    gy = 0.25 + j(0.01)
    gap = 0.19 + j(0.004)
    fixed = divider(0.30, [(gy - gap / 2, gy + gap / 2)])
    movables = [cube(Pose2(0.30 + j(0.003), gy + j(0.005), j(0.03)))]
    return (0.0, 0.6, 0.0, 0.5), _start(0.14, 0.25 + j(0.01)), Pose2(0.46, 0.25 + j(0.01), 0.0), movables, fixed


def _family1(j):
    # corridor offset from both start and goal, so the slider must line up before clearing it
    gy = 0.25 + j(0.01)
    gap = 0.19 + j(0.004)
    fixed = divider(0.30, [(gy - gap / 2, gy + gap / 2)])
    movables = [cube(Pose2(0.30 + j(0.003), gy + j(0.005), j(0.03)))]
    return (0.0, 0.6, 0.0, 0.5), _start(0.13, 0.20 + j(0.01)), Pose2(0.47, 0.30 + j(0.01), 0.0), movables, fixed


def _family2(j):
    # plugged direct gap plus an open gap near the top edge
    gy = 0.25 + j(0.005)
    fixed = divider(0.30, [(gy - 0.095, gy + 0.095), (0.44, 0.70)])
    movables = [cube(Pose2(0.30 + j(0.003), gy + j(0.005), j(0.03)))]
    return (0.0, 0.6, 0.0, 0.6), _start(0.14, 0.25 + j(0.005)), Pose2(0.46, 0.25 + j(0.005), 0.0), movables, fixed


def _family3(j):
    # wide gap with the cube sitting on the straight line; passing beside it needs a 90 deg turn
    fixed = divider(0.30, [(0.12, 0.38)])
    movables = [cube(Pose2(0.30 + j(0.003), 0.30 + j(0.005), j(0.03)))]
    return (0.0, 0.6, 0.0, 0.5), _start(0.14, 0.30 + j(0.005)), Pose2(0.46, 0.30 + j(0.005), 0.0), movables, fixed


def _family4(j):
    # free gap offset from the start-goal line
    gy = 0.30 + j(0.01)
    fixed = divider(0.30, [(gy - 0.10, gy + 0.10)])
    return (0.0, 0.6, 0.0, 0.5), _start(0.14, 0.25 + j(0.01)), Pose2(0.46, 0.25 + j(0.01), 0.0), [], fixed


_BUILDERS = (_family0, _family1, _family2, _family3, _family4)


def generate_scene(family: int, seed: int = 0) -> Scene:
    if family not in FAMILIES:
        raise ValueError(f"family must be one of {FAMILIES}")
    rng = np.random.default_rng([family, seed])

    def jitter(scale):
        return float(rng.uniform(-scale, scale))

    ws, x0, goal, movables, fixed = _BUILDERS[family](jitter)
    meta = {"family": family, "seed": seed}
    scene = Scene(ws, reference_slider(), x0, GoalRegion(goal, *GOAL_TOL), tuple(movables), tuple(fixed), meta)
    validate(scene)
    return scene


def open_scene(distance: float = 0.3) -> Scene:
    """Empty workspace with the goal straight ahead of the push face."""
    ws = (0.0, 0.1 + distance + 0.1, 0.0, 0.5)
    goal = GoalRegion(Pose2(0.1 + distance, 0.25, 0.0), *GOAL_TOL)
    return Scene(ws, reference_slider(), _start(0.1, 0.25), goal, (), (), {"family": "open"})
