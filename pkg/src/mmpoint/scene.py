"""Ground-truth scenes: point and distributed scatterers with constant-velocity motion.

The radar sits at the origin looking along +y; x points right and z up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Iterable, Sequence

import yaml

from mmpoint.errors import DomainError, SchemaError, ValidationError

Vec3 = tuple[float, float, float]


class Label(str, Enum):
    CAR = "car"
    ROADSIDE = "roadside"
    BICYCLE = "bicycle"
    PEDESTRIAN = "pedestrian"
    UNLABELED = "unlabeled"


# Scatterers per target when a distributed block omits ``n_points``.
# Roadside is per metre of the longest horizontal extent.
DEFAULT_POINTS = {
    Label.CAR: 8,
    Label.PEDESTRIAN: 1,
    Label.BICYCLE: 2,
    Label.ROADSIDE: 1,
    Label.UNLABELED: 1,
}


def _vec3(value: Iterable[float], name: str) -> Vec3:
    try:
        out = tuple(float(v) for v in value)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"expected three numbers, got {value!r}", name) from exc
    if len(out) != 3:
        raise SchemaError(f"expected three numbers, got {len(out)}", name)
    if not all(math.isfinite(v) for v in out):
        raise ValidationError(f"non-finite component in {out}", name)
    return out  # type: ignore[return-value]


@dataclass(frozen=True)
class Scatterer:
    position: Vec3
    velocity: Vec3 = (0.0, 0.0, 0.0)
    rcs: float = 1.0
    label: Label = Label.UNLABELED

    def __post_init__(self):
        object.__setattr__(self, "position", _vec3(self.position, "pos"))
        object.__setattr__(self, "velocity", _vec3(self.velocity, "vel"))
        object.__setattr__(self, "label", Label(self.label))
        if not math.isfinite(self.rcs) or self.rcs < 0:
            raise ValidationError(f"rcs must be finite and >= 0, got {self.rcs}", "rcs")
        object.__setattr__(self, "rcs", float(self.rcs))

    @property
    def range(self) -> float:
        return math.sqrt(sum(c * c for c in self.position))


@dataclass(frozen=True)
class Scene:
    scatterers: tuple[Scatterer, ...] = ()
    frame_interval: float = 0.05
    n_frames: int = 1
    # Distributed blocks as written in the source document; kept only so that
    # metrics can recover ground-truth target extents.
    targets: tuple[dict, ...] = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "scatterers", tuple(self.scatterers))
        if not (self.frame_interval > 0 and math.isfinite(self.frame_interval)):
            raise ValidationError("must be > 0", "frame_interval_s")
        if int(self.n_frames) != self.n_frames or self.n_frames < 1:
            raise ValidationError("must be a positive integer", "n_frames")

    @property
    def duration(self) -> float:
        return self.n_frames * self.frame_interval


def sample_scene(scene: Scene, t: float) -> list[Scatterer]:
    """Scatterer states at time ``t`` under constant-velocity motion."""
    if not 0.0 <= t <= scene.duration:
        raise DomainError(f"t={t} outside [0, {scene.duration}]")
    return [advance(s, t) for s in scene.scatterers]


def advance(s: Scatterer, dt: float) -> Scatterer:
    p, v = s.position, s.velocity
    return replace(s, position=(p[0] + v[0] * dt, p[1] + v[1] * dt, p[2] + v[2] * dt))


def make_distributed_target(
    center: Sequence[float],
    extent: Sequence[float],
    n_points: int,
    label: Label | str = Label.UNLABELED,
    rcs_total: float = 1.0,
    velocity: Sequence[float] = (0.0, 0.0, 0.0),
) -> list[Scatterer]:
    """Place ``n_points`` scatterers on the horizontal outline of a box.

    Points are spread at equal arc-length steps around the rectangle of
    size ``extent[0] x extent[1]``, starting half a step from the midpoint
    of the edge facing the radar, so the placement is mirror symmetric
    about the target's y axis and, for even counts, point symmetric about
    ``center``. All points share the center height and ``rcs_total`` is
    split evenly.
    """
    center = _vec3(center, "center")
    extent = _vec3(extent, "extent")
    if int(n_points) != n_points or n_points < 1:
        raise DomainError(f"n_points must be >= 1, got {n_points}")
    if any(e < 0 for e in extent):
        raise DomainError(f"extent components must be >= 0, got {extent}")
    n_points = int(n_points)
    rcs = rcs_total / n_points
    if n_points == 1:
        return [Scatterer(center, velocity, rcs_total, label)]

    cx, cy, cz = center
    hx, hy = extent[0] / 2.0, extent[1] / 2.0
    # Counter-clockwise from the front-edge midpoint: front-right half,
    # right side, back edge, left side, front-left half.
    legs = [
        ((0.0, -hy), (hx, -hy)),
        ((hx, -hy), (hx, hy)),
        ((hx, hy), (-hx, hy)),
        ((-hx, hy), (-hx, -hy)),
        ((-hx, -hy), (0.0, -hy)),
    ]
    lengths = [math.dist(a, b) for a, b in legs]
    perimeter = sum(lengths)
    out = []
    for i in range(n_points):
        s = (i + 0.5) * perimeter / n_points
        x, y = 0.0, -hy  # zero-perimeter (point-like) box
        for (a, b), length in zip(legs, lengths):
            if length > 0 and s <= length:
                f = s / length
                x, y = a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])
                break
            s -= length
        out.append(Scatterer((cx + x, cy + y, cz), velocity, rcs, label))
    return out


# ---------------------------------------------------------------- documents


def _require(doc: dict, key: str, where: str) -> Any:
    if key not in doc:
        raise SchemaError("missing required key", f"{where}{key}")
    return doc[key]


def _number(value: Any, key: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"expected a number, got {value!r}", key)
    return float(value)


def _label(value: Any, key: str) -> Label:
    try:
        return Label(value)
    except ValueError as exc:
        choices = ", ".join(l.value for l in Label)
        raise SchemaError(f"unknown label {value!r} (expected one of {choices})", key) from exc


def scene_from_dict(doc: Any) -> Scene:
    if not isinstance(doc, dict):
        raise SchemaError("scene document must be a mapping")
    known = {"frame_interval_s", "n_frames", "scatterers", "distributed", "default_points"}
    for key in doc:
        if key not in known:
            raise SchemaError("unknown key", str(key))

    frame_interval = _number(_require(doc, "frame_interval_s", ""), "frame_interval_s")
    n_frames = _require(doc, "n_frames", "")
    if isinstance(n_frames, bool) or not isinstance(n_frames, int):
        raise SchemaError(f"expected an integer, got {n_frames!r}", "n_frames")

    defaults = dict(DEFAULT_POINTS)
    for name, count in (doc.get("default_points") or {}).items():
        defaults[_label(name, f"default_points.{name}")] = int(count)

    scatterers: list[Scatterer] = []
    for i, item in enumerate(doc.get("scatterers") or []):
        where = f"scatterers[{i}]."
        if not isinstance(item, dict):
            raise SchemaError("expected a mapping", where[:-1])
        rcs = _number(_require(item, "rcs", where), where + "rcs")
        if not math.isfinite(rcs) or rcs < 0:
            raise ValidationError(f"rcs must be finite and >= 0, got {rcs}", where + "rcs")
        scatterers.append(
            Scatterer(
                _vec3(_require(item, "pos", where), where + "pos"),
                _vec3(item.get("vel", (0, 0, 0)), where + "vel"),
                rcs,
                _label(item.get("label", "unlabeled"), where + "label"),
            )
        )

    targets = []
    for i, block in enumerate(doc.get("distributed") or []):
        where = f"distributed[{i}]."
        if not isinstance(block, dict):
            raise SchemaError("expected a mapping", where[:-1])
        label = _label(block.get("label", "unlabeled"), where + "label")
        center = _vec3(_require(block, "center", where), where + "center")
        extent = _vec3(_require(block, "extent", where), where + "extent")
        rcs_total = _number(_require(block, "rcs_total", where), where + "rcs_total")
        if rcs_total < 0:
            raise ValidationError(f"rcs_total must be >= 0, got {rcs_total}", where + "rcs_total")
        if "n_points" in block:
            n_points = block["n_points"]
        elif label is Label.ROADSIDE:
            n_points = max(1, round(defaults[label] * max(extent[0], extent[1])))
        else:
            n_points = defaults[label]
        velocity = _vec3(block.get("vel", (0, 0, 0)), where + "vel")
        try:
            scatterers += make_distributed_target(center, extent, n_points, label, rcs_total, velocity)
        except DomainError as exc:
            raise ValidationError(str(exc), where + "n_points") from exc
        targets.append(
            {"label": label.value, "center": list(center), "extent": list(extent),
             "vel": list(velocity), "n_points": int(n_points)}
        )

    return Scene(tuple(scatterers), frame_interval, n_frames, tuple(targets))


def load_scene(config_text: str) -> Scene:
    """Parse a YAML (or JSON) scene document."""
    try:
        doc = yaml.safe_load(config_text)
    except yaml.YAMLError as exc:
        raise SchemaError(f"unparseable document: {exc}") from exc
    return scene_from_dict(doc)


def scene_to_dict(scene: Scene) -> dict:
    return {
        "frame_interval_s": scene.frame_interval,
        "n_frames": scene.n_frames,
        "scatterers": [
            {"pos": list(s.position), "vel": list(s.velocity), "rcs": s.rcs, "label": s.label.value}
            for s in scene.scatterers
        ],
    }


def serialize_scene(scene: Scene) -> str:
    """Render ``scene`` with every scatterer explicit (distributed blocks expanded)."""
    return yaml.safe_dump(scene_to_dict(scene), sort_keys=False)
