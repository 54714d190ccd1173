"""Scene files: JSON in SI units, schema-checked, plus semantic validation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from ..connect import GoalRegion
from ..dynamics import SliderModel, SliderState
from ..geom2d import CONTACT_TOLERANCE, ConvexPolygon, Pose2, polygon_collide
from ..interaction import ObstacleModel
from ..planner import PlanParams, PlanTask


class ParseError(ValueError):
    def __init__(self, msg: str, line: int | None = None):
        super().__init__(msg if line is None else f"line {line}: {msg}")
        self.line = line


class ValidationError(ValueError):
    def __init__(self, field: str, reason: str = "invalid"):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


_num = {"type": "number"}
_vec = lambda n: {"type": "array", "items": _num, "minItems": n, "maxItems": n}  # noqa: E731
_mat3 = {"type": "array", "items": _vec(3), "minItems": 3, "maxItems": 3}
_poly = {"type": "array", "items": _vec(2), "minItems": 3}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["workspace", "slider", "goal", "movables", "fixed", "meta"],
    "properties": {
        "workspace": _vec(4),
        "slider": {
            "type": "object",
            "additionalProperties": False,
            "required": ["footprint", "A", "mu_p", "f_bar", "psi_dot_bar", "psi_bar", "x0"],
            "properties": {
                "footprint": _poly,
                "A": _mat3,
                "mu_p": {"type": "number", "exclusiveMinimum": 0},
                "f_bar": {"type": "number", "exclusiveMinimum": 0},
                "psi_dot_bar": {"type": "number", "exclusiveMinimum": 0},
                "psi_bar": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                "x0": _vec(4),
            },
        },
        "goal": {
            "type": "object",
            "additionalProperties": False,
            "required": ["center", "tolerance"],
            "properties": {
                "center": _vec(3),
                "tolerance": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 3, "maxItems": 3},
            },
        },
        "movables": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["footprint", "A", "mu", "pose"],
                "properties": {"footprint": _poly, "A": _mat3, "mu": {"type": "number", "minimum": 0}, "pose": _vec(3)},
            },
        },
        "fixed": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["footprint", "pose"],
                "properties": {"footprint": _poly, "pose": _vec(3)},
            },
        },
        "meta": {"type": "object"},
    },
}


@dataclass(frozen=True, eq=False)
class Movable:
    model: ObstacleModel
    pose: Pose2


@dataclass(frozen=True, eq=False)
class Fixed:
    footprint: ConvexPolygon
    pose: Pose2

    @property
    def model(self) -> ObstacleModel:
        return ObstacleModel.from_footprint(self.footprint, 0.0, movable=False)


@dataclass(frozen=True, eq=False)
class Scene:
    workspace: tuple
    slider: SliderModel
    x0: SliderState
    goal: GoalRegion
    movables: tuple = ()
    fixed: tuple = ()
    meta: dict = field(default_factory=dict)

    def task(self, params: PlanParams | None = None) -> PlanTask:
        return PlanTask(
            self.slider,
            self.x0,
            self.goal,
            tuple(self.workspace),
            tuple((m.model, m.pose) for m in self.movables),
            tuple((f.model, f.pose) for f in self.fixed),
            params or PlanParams(),
        )

    def to_dict(self) -> dict:
        s = self.slider
        return {
            "workspace": [float(v) for v in self.workspace],
            "slider": {
                "footprint": s.footprint.vertices.tolist(),
                "A": s.A.tolist(),
                "mu_p": s.mu_p,
                "f_bar": s.f_bar,
                "psi_dot_bar": s.psi_dot_bar,
                "psi_bar": [v for v in s.psi_bar if math.isfinite(v)],
                "x0": self.x0.as_array().tolist(),
            },
            "goal": {
                "center": self.goal.center.as_array().tolist(),
                "tolerance": [self.goal.dx, self.goal.dy, self.goal.dtheta],
            },
            "movables": [
                {"footprint": m.model.footprint.vertices.tolist(), "A": m.model.A.tolist(), "mu": m.model.mu,
                 "pose": m.pose.as_array().tolist()}
                for m in self.movables
            ],
            "fixed": [{"footprint": f.footprint.vertices.tolist(), "pose": f.pose.as_array().tolist()} for f in self.fixed],
            "meta": dict(self.meta),
        }

    def __eq__(self, other):
        return isinstance(other, Scene) and self.to_dict() == other.to_dict()


def _build(field_name: str, fn, *args):
    try:
        return fn(*args)
    except ValidationError:
        raise
    except (ValueError, TypeError) as e:
        raise ValidationError(field_name, str(e)) from None


def _polygon(pts) -> ConvexPolygon:
    return ConvexPolygon(np.array(pts, dtype=float))


def from_dict(d: dict) -> Scene:
    try:
        jsonschema.validate(d, SCHEMA)
    except jsonschema.ValidationError as e:
        path = ".".join(str(p) for p in e.absolute_path) or "<root>"
        raise ValidationError(path, e.message) from None
    ws = tuple(float(v) for v in d["workspace"])
    if not (ws[0] < ws[1] and ws[2] < ws[3]):
        raise ValidationError("workspace", "expected [xmin, xmax, ymin, ymax] with min < max")
    s = d["slider"]
    poly = _build("slider.footprint", _polygon, s["footprint"])
    psi_bar = tuple(s["psi_bar"])
    if psi_bar and len(psi_bar) != poly.n_faces:
        raise ValidationError("slider.psi_bar", "needs one entry per face")
    model = _build("slider.A", SliderModel, poly, np.array(s["A"]), s["mu_p"], s["f_bar"], s["psi_dot_bar"], psi_bar)
    x0 = SliderState.from_array(s["x0"])
    g = d["goal"]
    goal = GoalRegion(Pose2(*g["center"]), *g["tolerance"])
    movables = []
    for i, m in enumerate(d["movables"]):
        fp = _build(f"movables.{i}.footprint", _polygon, m["footprint"])
        om = _build(f"movables.{i}.A", ObstacleModel, fp, np.array(m["A"]), m["mu"], True)
        movables.append(Movable(om, Pose2(*m["pose"])))
    fixed = [
        Fixed(_build(f"fixed.{i}.footprint", _polygon, f["footprint"]), Pose2(*f["pose"]))
        for i, f in enumerate(d["fixed"])
    ]
    scene = Scene(ws, model, x0, goal, tuple(movables), tuple(fixed), dict(d["meta"]))
    validate(scene)
    return scene


def _inside(ws, x, y) -> bool:
    return ws[0] <= x <= ws[1] and ws[2] <= y <= ws[3]


def validate(scene: Scene) -> None:
    """Semantic checks the schema cannot express."""
    ws = scene.workspace
    c = scene.goal.center
    if not _inside(ws, c.x, c.y):
        raise ValidationError("goal.center", "outside workspace")
    x0 = scene.x0
    if not _inside(ws, x0.pose.x, x0.pose.y):
        raise ValidationError("slider.x0", "outside workspace")
    try:
        scene.slider.face_of(x0.psi_c)
    except ValueError as e:
        raise ValidationError("slider.x0", str(e)) from None
    bodies = [("slider.x0", scene.slider.footprint, x0.pose)]
    bodies += [(f"movables.{i}.pose", m.model.footprint, m.pose) for i, m in enumerate(scene.movables)]
    bodies += [(f"fixed.{i}.pose", f.footprint, f.pose) for i, f in enumerate(scene.fixed)]
    for i in range(len(bodies)):
        for j in range(i + 1, len(bodies)):
            a, b = bodies[i], bodies[j]
            if a[0].startswith("fixed") and b[0].startswith("fixed"):
                continue
            if polygon_collide(a[1], a[2], b[1], b[2], CONTACT_TOLERANCE).in_contact:
                raise ValidationError(b[0], f"in contact with {a[0].rsplit('.', 1)[0]}")


def loads(text: str) -> Scene:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, e.lineno) from None
    return from_dict(d)


def load_scene(path) -> Scene:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise ParseError(f"not UTF-8: {e}") from None
    return loads(text)


def dumps(scene: Scene) -> str:
    return json.dumps(scene.to_dict(), indent=2)


def save_scene(scene: Scene, path) -> None:
    Path(path).write_text(dumps(scene) + "\n", encoding="utf-8")
