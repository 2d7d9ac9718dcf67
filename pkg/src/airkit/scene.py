"""Scene graphs: boxes, objects, attributes and relationship edges.

Documents follow the GQA-compatible JSON layout::

    {"image_id": "...", "width": 640, "height": 480,
     "objects": {"o1": {"category": "car", "box": [x, y, w, h],
                        "attributes": ["red"],
                        "relations": [{"predicate": "left of", "target": "o2"}]}}}

Coordinates use a top-left origin with boxes as ``(x, y, w, h)`` in pixels.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from airkit.errors import SceneError

_WS = re.compile(r"\s+")


def normalize_token(token: str) -> str:
    """Lowercase and collapse internal whitespace."""
    return _WS.sub(" ", str(token).strip()).lower()


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise SceneError(f"box must have positive width and height, got w={self.w}, h={self.h}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> tuple[float, float]:
        return self.x + self.w / 2.0, self.y + self.h / 2.0

    def clipped(self, width: float, height: float) -> BoundingBox | None:
        """Intersection with the image rectangle, or None when nothing is left."""
        x1, y1 = max(self.x, 0.0), max(self.y, 0.0)
        x2, y2 = min(self.x2, float(width)), min(self.y2, float(height))
        if x2 <= x1 or y2 <= y1:
            return None
        return BoundingBox(x1, y1, x2 - x1, y2 - y1)

    def scaled(self, sx: float, sy: float | None = None) -> BoundingBox:
        sy = sx if sy is None else sy
        return BoundingBox(self.x * sx, self.y * sy, self.w * sx, self.h * sy)

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]


@dataclass(frozen=True)
class SceneObject:
    id: str
    category: str
    box: BoundingBox
    attributes: frozenset[str] = frozenset()
    relations: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class SceneGraph:
    image_id: str
    width: float
    height: float
    objects: Mapping[str, SceneObject] = field(default_factory=dict)

    def __hash__(self):
        return hash((self.image_id, self.width, self.height, tuple(self.objects)))

    def __len__(self):
        return len(self.objects)

    def categories(self) -> set[str]:
        return {o.category for o in self.objects.values()}

    def box(self, object_id: str) -> BoundingBox:
        return self.objects[object_id].box


def objects_by_category(g: SceneGraph, category: str) -> set[str]:
    """Ids of every object whose normalized category equals ``category``."""
    cat = normalize_token(category)
    return {oid for oid, obj in g.objects.items() if obj.category == cat}


def has_attribute(obj: SceneObject, attribute: str) -> bool:
    return normalize_token(attribute) in obj.attributes


def _number(value, what: str, oid: str | None = None) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SceneError(f"{what} must be a number, got {value!r}", object_id=oid)
    return float(value)


def scene_from_dict(doc: Mapping) -> SceneGraph:
    """Validate a decoded scene-graph document."""
    if not isinstance(doc, Mapping):
        raise SceneError("scene-graph document must be a JSON object")
    for key in ("image_id", "width", "height", "objects"):
        if key not in doc:
            raise SceneError(f"missing required field {key!r}")
    width = _number(doc["width"], "width")
    height = _number(doc["height"], "height")
    if width <= 0 or height <= 0:
        raise SceneError(f"image size must be positive, got {width}x{height}")
    raw_objects = doc["objects"]
    if not isinstance(raw_objects, Mapping):
        raise SceneError("'objects' must be a JSON object keyed by object id")

    objects: dict[str, SceneObject] = {}
    for oid, entry in raw_objects.items():
        oid = str(oid)
        if oid in objects:
            raise SceneError(f"duplicate object id {oid!r}", object_id=oid)
        if not isinstance(entry, Mapping):
            raise SceneError(f"object {oid!r} must be a JSON object", object_id=oid)
        if "category" not in entry or "box" not in entry:
            raise SceneError(f"object {oid!r} needs 'category' and 'box'", object_id=oid)
        raw_box = entry["box"]
        if not isinstance(raw_box, (list, tuple)) or len(raw_box) != 4:
            raise SceneError(f"object {oid!r}: box must be [x, y, w, h]", object_id=oid)
        x, y, w, h = (_number(v, "box coordinate", oid) for v in raw_box)
        if w <= 0 or h <= 0:
            raise SceneError(f"object {oid!r}: non-positive box size w={w}, h={h}", object_id=oid)
        box = BoundingBox(x, y, w, h).clipped(width, height)
        if box is None:
            raise SceneError(f"object {oid!r}: box has zero area inside the image", object_id=oid)
        relations = []
        for rel in entry.get("relations", []):
            if not isinstance(rel, Mapping) or "predicate" not in rel or "target" not in rel:
                raise SceneError(f"object {oid!r}: relation needs 'predicate' and 'target'", object_id=oid)
            relations.append((normalize_token(rel["predicate"]), str(rel["target"])))
        objects[oid] = SceneObject(
            id=oid,
            category=normalize_token(entry["category"]),
            box=box,
            attributes=frozenset(normalize_token(a) for a in entry.get("attributes", [])),
            relations=tuple(relations),
        )

    for obj in objects.values():
        for _, target in obj.relations:
            if target not in objects:
                raise SceneError(
                    f"object {obj.id!r} has a relation to unknown object {target!r}",
                    object_id=target,
                )
    return SceneGraph(str(doc["image_id"]), width, height, objects)


def _reject_duplicate_keys(pairs):
    out = {}
    for key, value in pairs:
        if key in out:
            raise SceneError(f"duplicate object id {key!r}", object_id=key)
        out[key] = value
    return out


def parse_scene_graph(text: str) -> SceneGraph:
    """Parse and validate a JSON scene-graph document."""
    try:
        doc = json.loads(text, object_pairs_hook=_reject_duplicate_keys)
    except json.JSONDecodeError as exc:
        raise SceneError(exc.msg, line=exc.lineno, column=exc.colno) from exc
    return scene_from_dict(doc)


def _plain_number(v: float):
    return int(v) if float(v).is_integer() else v


def scene_to_dict(g: SceneGraph) -> dict:
    return {
        "image_id": g.image_id,
        "width": _plain_number(g.width),
        "height": _plain_number(g.height),
        "objects": {
            oid: {
                "category": obj.category,
                "box": [_plain_number(v) for v in obj.box.as_list()],
                "attributes": sorted(obj.attributes),
                "relations": [{"predicate": p, "target": t} for p, t in obj.relations],
            }
            for oid, obj in g.objects.items()
        },
    }


def serialize_scene_graph(g: SceneGraph) -> str:
    return json.dumps(scene_to_dict(g), indent=2)


def load_scene_graph(path) -> SceneGraph:
    with open(path, encoding="utf-8") as fh:
        return parse_scene_graph(fh.read())


def load_scene_dir(path) -> dict[str, SceneGraph]:
    """Load every ``*.json`` scene graph in a directory keyed by image id."""
    from pathlib import Path

    scenes = {}
    for p in sorted(Path(path).glob("*.json")):
        try:
            g = load_scene_graph(p)
        except SceneError as exc:
            raise SceneError(f"{p}: {exc}", object_id=exc.object_id) from exc
        if g.image_id in scenes:
            raise SceneError(f"{p}: duplicate image_id {g.image_id!r}")
        scenes[g.image_id] = g
    return scenes


def make_scene(image_id: str, width: float, height: float, objects: Iterable[SceneObject]) -> SceneGraph:
    """Build a graph from already-constructed objects (runs the same checks as parsing)."""
    doc = {
        "image_id": image_id,
        "width": width,
        "height": height,
        "objects": {
            o.id: {
                "category": o.category,
                "box": o.box.as_list(),
                "attributes": sorted(o.attributes),
                "relations": [{"predicate": p, "target": t} for p, t in o.relations],
            }
            for o in objects
        },
    }
    return scene_from_dict(doc)
