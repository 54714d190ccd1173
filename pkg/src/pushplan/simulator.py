"""Quasi-static plant: slider plus movables under pusher inputs, reactions and scheduled disturbances."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import PusherInput, SliderModel, SliderState, _rate
from .geom2d import CONTACT_TOLERANCE, Pose2, VertexAmbiguity, polygon_collide
from .interaction import (
    PENETRATION_LIMIT,
    SUBSTEP,
    LcpUnsolvable,
    _Body,
    _near,
    global_limit_matrix,
    push_contact,
)

LOG_HEADER = ("t", "x", "y", "theta", "psi_c", "fn", "ft", "psidot", "dhat_x", "dhat_y", "dhat_w", "err_x", "err_y",
              "event")


@dataclass(frozen=True)
class DisturbanceSchedule:
    """(t_start, t_end, d) entries; d is a state-rate 4-vector, active on [t_start, t_end)."""

    entries: tuple = ()

    def __post_init__(self):
        out = []
        for t0, t1, d in self.entries:
            d = np.array(d, dtype=float).reshape(4)
            if t1 < t0:
                raise ValueError("disturbance interval ends before it starts")
            d[3] = 0.0
            out.append((float(t0), float(t1), d))
        object.__setattr__(self, "entries", tuple(out))

    def __call__(self, t: float) -> np.ndarray:
        d = np.zeros(4)
        for t0, t1, dk in self.entries:
            if t0 <= t < t1:
                d += dk
        return d

    @classmethod
    def force(cls, model: SliderModel, t0: float, t1: float, force_xy, theta: float = 0.0) -> "DisturbanceSchedule":
        """A constant global force (N) at the centroid, converted to a pose rate through the limit matrix."""
        w = np.array([force_xy[0], force_xy[1], 0.0])
        d = np.zeros(4)
        d[:3] = global_limit_matrix(model.A, theta) @ w
        return cls(((t0, t1, d),))


NO_DISTURBANCE = DisturbanceSchedule()


@dataclass(frozen=True)
class WorldState:
    slider: SliderState
    movables: tuple = ()
    time: float = 0.0
    faulted: str = ""
    # mean global wrench on the slider over the last step, and whether any movable was touched
    reaction: np.ndarray = field(default_factory=lambda: np.zeros(3), repr=False)
    contact: bool = False


def _fault(world: WorldState, reason: str, t: float) -> WorldState:
    return replace(world, faulted=reason, time=t)


def step(world: WorldState, model: SliderModel, u: PusherInput, dt: float,
         schedule: DisturbanceSchedule = NO_DISTURBANCE, movables=(), fixed=(), integrator: str = "rk2",
         tol: float = CONTACT_TOLERANCE) -> WorldState:
    """Advance the world by dt.

    movables are ObstacleModels matching world.movables; fixed holds (ObstacleModel, Pose2).
    The slider moves by its nominal rate plus the scheduled disturbance; while it touches
    a movable, the contact LCP moves the movable and its reaction enters the slider rate
    through the limit matrix. Contact is resolved on substeps no longer than SUBSTEP.
    """
    if not 0.0 < dt <= 0.05:
        raise ValueError("dt must lie in (0, 0.05]")
    if integrator not in ("rk2", "euler"):
        raise ValueError("integrator must be 'rk2' or 'euler'")
    if world.faulted:
        return world
    if len(movables) != len(world.movables):
        raise ValueError("one obstacle model per movable pose")
    try:
        face = model.face_of(world.slider.psi_c)
    except (ValueError, VertexAmbiguity):
        return _fault(world, "face", world.time)
    a0, a1 = model.footprint.face_span(face)
    ua = u.as_array()
    x = world.slider.as_array()
    x[3] = model.unwrap_on_face(face, x[3])
    poly = model.footprint
    bodies = [_Body(m, p) for m, p in zip(movables, world.movables)]
    walls = [_Body(m, p) for m, p in fixed]
    t = world.time

    def rate(xs, ts):
        return _rate(model, xs, ua, face) + schedule(ts)

    n_sub = max(1, math.ceil(dt / SUBSTEP - 1e-9)) if bodies else 1
    h = dt / n_sub
    reaction_sum = np.zeros(3)
    touched = False
    for j in range(n_sub):
        ts = t + j * h
        k1 = rate(x, ts)
        if integrator == "rk2":
            x_nom = x + h * rate(x + 0.5 * h * k1, ts + 0.5 * h)
        else:
            x_nom = x + h * k1
        V_s = (x_nom[:3] - x[:3]) / h
        reaction = np.zeros(3)
        moved = {}
        end = Pose2(*x_nom[:3])
        for i, b in enumerate(bodies):
            if not _near(end, poly.radius, b.pose, b.radius, tol + h * float(np.hypot(*V_s[:2]))):
                continue
            try:
                out = push_contact(poly, end, V_s, b, h, tol)
            except LcpUnsolvable:
                return _fault(world, "lcp", ts)
            if out is None:
                continue
            V_o, r, _ = out
            reaction += r
            moved[i] = V_o
        x_new = x_nom.copy()
        if moved:
            touched = True
            x_new[:3] += h * (global_limit_matrix(model.A, x[2]) @ reaction)
            reaction_sum += reaction
            for i, V_o in moved.items():
                bodies[i].pose = Pose2(*(bodies[i].pose.as_array() + h * V_o))
        x = x_new
        if not (a0 < x[3] < a1):
            return _fault(world, "face", ts + h)
        s_pose = Pose2(*x[:3])
        for b in bodies:
            if _near(s_pose, poly.radius, b.pose, b.radius, tol):
                if polygon_collide(poly, s_pose, b.model.footprint, b.pose, tol).depth > PENETRATION_LIMIT:
                    return _fault(world, "penetration", ts + h)
        for wb in walls:
            for m_poly, m_pose, r in [(poly, s_pose, poly.radius)] + [(b.model.footprint, b.pose, b.radius) for b in bodies]:
                if _near(m_pose, r, wb.pose, wb.radius, tol):
                    if polygon_collide(m_poly, m_pose, wb.model.footprint, wb.pose, tol).depth > PENETRATION_LIMIT:
                        return _fault(world, "fixed-contact", ts + h)
    return WorldState(SliderState.from_array(x), tuple(b.pose for b in bodies), t + dt, "", reaction_sum / n_sub,
                      touched)


class Plant:
    """Mutable handle around step() for closed-loop use."""

    def __init__(self, model: SliderModel, world: WorldState, movables=(), fixed=(),
                 schedule: DisturbanceSchedule = NO_DISTURBANCE, integrator: str = "rk2"):
        self.model = model
        self.world = world
        self.movables = tuple(movables)
        self.fixed = tuple(fixed)
        self.schedule = schedule
        self.integrator = integrator

    @classmethod
    def from_scene(cls, scene, schedule: DisturbanceSchedule = NO_DISTURBANCE, integrator: str = "rk2") -> "Plant":
        world = WorldState(scene.x0, tuple(m.pose for m in scene.movables))
        return cls(scene.slider, world, [m.model for m in scene.movables], [(f.model, f.pose) for f in scene.fixed],
                   schedule, integrator)

    def step(self, u: PusherInput, dt: float) -> WorldState:
        self.world = step(self.world, self.model, u, dt, self.schedule, self.movables, self.fixed, self.integrator)
        return self.world

    def replace_pusher(self, psi_c: float) -> None:
        """Re-place the pusher on the slider (takes no time)."""
        s = self.world.slider
        self.world = replace(self.world, slider=SliderState(s.pose, psi_c))


@dataclass
class EpisodeLog:
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    movables: list = field(default_factory=list)
    inputs: list = field(default_factory=list)
    reactions: list = field(default_factory=list)
    contact: list = field(default_factory=list)
    fault: str = ""
    fault_time: float = math.nan

    def as_array(self) -> np.ndarray:
        return np.array([s.as_array() for s in self.states])

    def rows(self):
        for k, (t, s) in enumerate(zip(self.times, self.states)):
            u = self.inputs[k].as_array() if k < len(self.inputs) else np.zeros(3)
            event = "contact" if k < len(self.contact) and self.contact[k] else ""
            if self.fault and k == len(self.states) - 1:
                event = f"fault:{self.fault}"
            yield [t, *s.as_array(), *u, 0.0, 0.0, 0.0, 0.0, 0.0, event]

    def to_csv(self, path) -> None:
        write_log(path, self.rows())


def write_log(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_HEADER)
        for r in rows:
            w.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in r])


def run_episode(plant: Plant, controller, duration: float, dt: float = 0.04) -> EpisodeLog:
    """Fixed-rate loop. controller is a sequence of PusherInput (zero after it runs out)
    or a callable (t, world) -> PusherInput."""
    log = EpisodeLog()
    log.times.append(plant.world.time)
    log.states.append(plant.world.slider)
    log.movables.append(plant.world.movables)
    n = int(round(duration / dt))
    for k in range(n):
        w = plant.world
        if callable(controller):
            u = controller(w.time, w)
        else:
            u = controller[k] if k < len(controller) else PusherInput(0.0, 0.0, 0.0)
        w = plant.step(u, dt)
        log.inputs.append(u)
        log.reactions.append(w.reaction)
        log.contact.append(w.contact)
        log.times.append(w.time)
        log.states.append(w.slider)
        log.movables.append(w.movables)
        if w.faulted:
            log.fault, log.fault_time = w.faulted, w.time
            break
    return log


def replay_plan(plant: Plant, plan, tau_lqr: float | None = None) -> EpisodeLog:
    """Open-loop replay of a plan's controls, re-placing the pusher where the plan switches faces."""
    dt = tau_lqr or plan.stats.get("tau_lqr", 0.01)
    switches = dict(plan.face_switches)
    log = EpisodeLog()
    log.times.append(plant.world.time)
    log.states.append(plant.world.slider)
    log.movables.append(plant.world.movables)
    for k, u in enumerate(plan.controls):
        if k in switches:
            plant.replace_pusher(switches[k])
        w = plant.step(u, dt)
        log.inputs.append(u)
        log.reactions.append(w.reaction)
        log.contact.append(w.contact)
        log.times.append(w.time)
        log.states.append(w.slider)
        log.movables.append(w.movables)
        if w.faulted:
            log.fault, log.fault_time = w.faulted, w.time
            break
    return log
