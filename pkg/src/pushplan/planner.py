"""Contact-aware RRT over slider states with a paired tree of planning scenes."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .connect import ConnectionResult, GoalRegion, LqrConfig, connect, connect_goal, goal_reach_bound
from .dynamics import FaceExit, PusherInput, SliderModel, SliderState
from .geom2d import Pose2, VertexAmbiguity, wrap_angle, wrap_array
from .interaction import ObstacleModel, simulate_interaction
from .reachset import DEFAULT_WEIGHTS, InfeasibleCell, ReachIndex, build_reachable_set

DUPLICATE_TOL = 1e-4


class NodeNotInTree(KeyError):
    pass


@dataclass(frozen=True)
class PlanParams:
    tau: float = 0.05
    tau_lqr: float = 0.01
    n_max: int = 1000
    goal_bias: float = 0.1
    seed: int = 0
    max_time: float = 1e3
    # extension attempts; rejections count too, so a stuck search still ends
    max_iterations: int | None = None
    contact_enabled: bool = True
    weights: tuple = tuple(DEFAULT_WEIGHTS)

    def __post_init__(self):
        if self.tau <= 0 or self.tau_lqr <= 0:
            raise ValueError("step sizes must be positive")
        ratio = self.tau / self.tau_lqr
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("tau must be an integer multiple of tau_lqr")
        if not 0.0 <= self.goal_bias <= 1.0:
            raise ValueError("goal_bias must lie in [0, 1]")
        if self.n_max < 1:
            raise ValueError("n_max must be positive")

    @property
    def horizon(self) -> int:
        return int(round(self.tau / self.tau_lqr))

    @property
    def iteration_budget(self) -> int:
        return self.max_iterations if self.max_iterations is not None else 20 * self.n_max

    def lqr(self) -> LqrConfig:
        return LqrConfig(tau_lqr=self.tau_lqr, horizon=self.horizon)


@dataclass(frozen=True)
class PlanTask:
    model: SliderModel
    x0: SliderState
    goal: GoalRegion
    workspace: tuple  # (xmin, xmax, ymin, ymax)
    movables: tuple = ()  # (ObstacleModel, Pose2)
    fixed: tuple = ()  # (ObstacleModel, Pose2)
    params: PlanParams = field(default_factory=PlanParams)

    def in_workspace(self, xy) -> bool:
        x0, x1, y0, y1 = self.workspace
        return x0 <= xy[0] <= x1 and y0 <= xy[1] <= y1


@dataclass
class PlanNode:
    id: int
    state: SliderState
    controls: tuple
    parent: int | None
    scene: tuple
    # rollout substates from the parent (start included), psi_c unwrapped on the face
    substates: np.ndarray = field(repr=False, default=None)
    face: int = -1
    face_switch: bool = False
    reachable: object = field(repr=False, default=None)


@dataclass(frozen=True)
class Added:
    node: PlanNode


@dataclass(frozen=True)
class Rejected:
    reason: str


ExtendOutcome = Union[Added, Rejected]


class SearchTree:
    """Slider nodes with their controls; each node also carries its planning scene."""

    def __init__(self, task: PlanTask):
        self.task = task
        p = task.params
        self.weights = np.asarray(p.weights, dtype=float)
        self.index = ReachIndex(self.weights)
        self.nodes: list[PlanNode] = []
        self._states = np.zeros((0, 4))
        self._scene_keys: list = []

    def __len__(self):
        return len(self.nodes)

    def add(self, state: SliderState, controls, parent, scene, substates, face, switch) -> PlanNode:
        node = PlanNode(len(self.nodes), state, tuple(controls), parent, tuple(scene), substates, face, switch)
        node.reachable = build_reachable_set(self.task.model, state, self.task.params.tau, self.weights)
        self.nodes.append(node)
        self.index.add(node.reachable)
        self._states = np.vstack([self._states, state.as_array()])
        self._scene_keys.append(_scene_key(scene))
        return node

    def get_environ(self, node_id: int) -> tuple:
        return self.nodes[node_id].scene

    def is_duplicate(self, x: SliderState, scene) -> bool:
        d = self._states - x.as_array()
        d[:, 2:] = wrap_array(d[:, 2:])
        dist = np.linalg.norm(d * self.weights, axis=1)
        key = _scene_key(scene)
        return any(dist[i] <= DUPLICATE_TOL and self._scene_keys[i] == key for i in np.nonzero(dist <= DUPLICATE_TOL)[0])


def _scene_key(scene) -> tuple:
    return tuple((p.x, p.y, p.theta) for p in scene)


@dataclass
class PlanResult:
    success: bool
    controls: tuple
    states: np.ndarray
    scenes_along_path: list
    stats: dict
    # (step k, psi_c): pusher re-placed at psi_c before controls[k] is applied
    face_switches: tuple = ()
    # index into states of every path node
    node_steps: tuple = ()
    tree: SearchTree | None = field(default=None, repr=False)


def sample_state(task: PlanTask, rng) -> SliderState:
    """Goal center with probability goal_bias, else uniform over workspace and angles."""
    if rng.uniform() < task.params.goal_bias:
        c = task.goal.center
        return SliderState(c, rng.uniform(-math.pi, math.pi))
    x0, x1, y0, y1 = task.workspace
    return SliderState.of(rng.uniform(x0, x1), rng.uniform(y0, y1), rng.uniform(-math.pi, math.pi),
                          rng.uniform(-math.pi, math.pi))


def _simulate(task: PlanTask, conn: ConnectionResult, scene):
    movables = [(m, p) for (m, _), p in zip(task.movables, scene)]
    return simulate_interaction(conn.states, conn.controls, movables, task.fixed, task.model,
                                task.params.tau_lqr, contact_enabled=task.params.contact_enabled)


def _try_child(tree: SearchTree, parent: PlanNode, conn: ConnectionResult) -> ExtendOutcome:
    task = tree.task
    if not all(task.in_workspace(s[:2]) for s in conn.states[1:]):
        return Rejected("workspace")
    sim = _simulate(task, conn, parent.scene)
    if not sim.feasible:
        return Rejected("infeasible")
    if tree.is_duplicate(conn.x_term, sim.movable_poses):
        return Rejected("duplicate")
    switch = conn.face != parent.face
    node = tree.add(conn.x_term, conn.controls, parent.id, sim.movable_poses, conn.states, conn.face, switch)
    return Added(node)


def extend(tree: SearchTree, x_new: SliderState, task: PlanTask | None = None) -> ExtendOutcome:
    task = task or tree.task
    try:
        nr = tree.index.query(x_new)
    except InfeasibleCell:
        return Rejected("no-cell")
    parent = tree.nodes[nr.node]
    try:
        conn = connect(task.model, parent.state, nr.x_near, nr.cell, task.params.lqr(), weights=tree.weights)
    except (FaceExit, VertexAmbiguity):
        return Rejected("face-exit")
    return _try_child(tree, parent, conn)


def _goal_gap(goal: GoalRegion, pose: Pose2) -> float:
    c = goal.center
    return math.hypot(max(abs(pose.x - c.x) - goal.dx, 0.0), max(abs(pose.y - c.y) - goal.dy, 0.0))


def _try_goal(tree: SearchTree, node: PlanNode) -> PlanNode | None:
    task = tree.task
    if _goal_gap(task.goal, node.state.pose) > goal_reach_bound(task.model, task.params.lqr()):
        return None
    try:
        conn = connect_goal(task.model, node.state, task.goal, task.params.lqr(), weights=tree.weights)
    except (FaceExit, VertexAmbiguity):
        return None
    if not conn.reached:
        return None
    if not conn.controls:
        return node
    if len(tree) >= task.params.n_max:
        return None
    out = _try_child(tree, node, conn)
    if isinstance(out, Added) and task.goal.contains(out.node.state.pose):
        return out.node
    return None


def extract_path(tree: SearchTree, goal_node) -> tuple:
    """(states, controls, scenes, face_switches, node_steps) from the root to goal_node."""
    gid = goal_node.id if isinstance(goal_node, PlanNode) else int(goal_node)
    if not 0 <= gid < len(tree.nodes):
        raise NodeNotInTree(gid)
    chain = []
    n = tree.nodes[gid]
    while n is not None:
        chain.append(n)
        n = tree.nodes[n.parent] if n.parent is not None else None
    chain.reverse()
    states = [chain[0].state.as_array()]
    controls: list[PusherInput] = []
    scenes = [list(chain[0].scene)]
    switches = []
    steps = [0]
    for node in chain[1:]:
        sub = node.substates
        if abs(wrap_angle(sub[0, 3] - states[-1][3])) > 1e-12:
            switches.append((len(controls), float(sub[0, 3])))
        states.extend(sub[1:])
        controls.extend(node.controls)
        scenes.append(list(node.scene))
        steps.append(len(states) - 1)
    X = np.array(states)
    X[:, 3] = wrap_array(X[:, 3])
    return X, tuple(controls), scenes, tuple(switches), tuple(steps)


def path_length(states: np.ndarray) -> float:
    if len(states) < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(states[:, :2], axis=0), axis=1)))


def plan(task: PlanTask) -> PlanResult:
    """Grow the tree until the goal region is connected or a budget runs out."""
    p = task.params
    rng = np.random.default_rng(p.seed)
    t0 = time.perf_counter()
    tree = SearchTree(task)
    face0 = task.model.face_of(task.x0.psi_c)
    x0 = task.x0.as_array()
    x0[3] = task.model.unwrap_on_face(face0, x0[3])
    root = tree.add(task.x0, (), None, tuple(pose for _, pose in task.movables), x0[None], face0, False)
    reasons: dict = {}
    iterations = 0
    goal_node = root if task.goal.contains(task.x0.pose) else None
    if goal_node is None:
        goal_node = _try_goal(tree, root)
    while goal_node is None and len(tree) < p.n_max and iterations < p.iteration_budget:
        if time.perf_counter() - t0 > p.max_time:
            break
        iterations += 1
        out = extend(tree, sample_state(task, rng), task)
        if isinstance(out, Rejected):
            reasons[out.reason] = reasons.get(out.reason, 0) + 1
            continue
        goal_node = _try_goal(tree, out.node)
    wall = time.perf_counter() - t0
    stats = {"nodes_in_tree": len(tree), "iterations": iterations, "wall_time": wall, "rejections": reasons,
             "tau_lqr": p.tau_lqr}
    if goal_node is None:
        stats["path_length_m"] = math.nan
        return PlanResult(False, (), np.zeros((0, 4)), [], stats, tree=tree)
    X, U, scenes, switches, steps = extract_path(tree, goal_node)
    stats["path_length_m"] = path_length(X)
    return PlanResult(True, U, X, scenes, stats, switches, steps, tree)
