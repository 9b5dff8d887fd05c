"""Multi-object grasp annotations: parsing, writing, validation, augmentation.

On disk a scene is two files under ``<root>/annotations/``:

``<image_id>.objects``
    JSON: ``{"image_id", "width", "height", "objects": [{"index", "category",
    "bbox": [x_min, y_min, x_max, y_max]}]}``.
``<image_id>.grasp``
    One grasp per line, ten whitespace separated tokens
    ``x1 y1 x2 y2 x3 y3 x4 y4 flag index`` where ``flag`` is 0 (easy) or
    1 (hard) and ``index`` names the owning object.

``<root>/index`` lists image ids one per line. An optional ``<root>/split``
holds ``<image_id> <train|val>`` lines.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from roigrasp.errors import NotARectangle, ParseError, ValidationError
from roigrasp.geometry import (
    AxisAlignedBox,
    OrientedRect,
    rect_to_vertices,
    vertices_to_rect,
)

TRANSFORMS = ("hflip", "rot90", "rot180", "rot270")


@dataclass(frozen=True)
class GraspAnnotation:
    rect: OrientedRect
    hard: bool = False
    owner_index: int = 1


@dataclass(frozen=True)
class ObjectAnnotation:
    index: int
    category: str
    bbox: AxisAlignedBox


@dataclass(frozen=True)
class SceneAnnotation:
    image_id: str
    width: float
    height: float
    objects: Tuple[ObjectAnnotation, ...] = ()
    grasps: Tuple[GraspAnnotation, ...] = ()

    def object_by_index(self, index: int) -> Optional[ObjectAnnotation]:
        for obj in self.objects:
            if obj.index == index:
                return obj
        return None

    def grasps_of(self, index: int) -> List[GraspAnnotation]:
        return [g for g in self.grasps if g.owner_index == index]

    def categories(self) -> List[str]:
        return [o.category for o in self.objects]


def validate_scene(s: SceneAnnotation) -> SceneAnnotation:
    """Raise ValidationError unless every scene invariant holds."""
    if not (s.width > 0 and s.height > 0):
        raise ValidationError(f"{s.image_id}: image size must be positive")
    seen = set()
    for obj in s.objects:
        if obj.index < 1:
            raise ValidationError(f"{s.image_id}: object index {obj.index} must be >= 1")
        if obj.index in seen:
            raise ValidationError(f"{s.image_id}: duplicate object index {obj.index}")
        seen.add(obj.index)
        b = obj.bbox
        if b.x_min < 0 or b.y_min < 0 or b.x_max > s.width or b.y_max > s.height:
            raise ValidationError(f"{s.image_id}: object {obj.index} box {b.as_list()} outside image")
    for i, g in enumerate(s.grasps):
        if g.owner_index not in seen:
            raise ValidationError(
                f"{s.image_id}: grasp {i + 1} references missing object {g.owner_index}"
            )
        if not (0 <= g.rect.x <= s.width and 0 <= g.rect.y <= s.height):
            raise ValidationError(f"{s.image_id}: grasp {i + 1} centre outside image")
    return s


# ---- text formats ----------------------------------------------------------


def fmt_num(v: float) -> str:
    """Fixed six-decimal rendering with trailing zeros removed."""
    text = f"{v:.6f}".rstrip("0").rstrip(".")
    return "0" if text in ("-0", "") else text


def parse_objects(doc: str, source: str = "<objects>") -> dict:
    try:
        data = json.loads(doc)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, source, exc.lineno) from None
    if not isinstance(data, dict):
        raise ParseError("object document must be a JSON object", source)
    for key in ("image_id", "width", "height", "objects"):
        if key not in data:
            raise ParseError(f"missing field {key!r}", source)
    objects = []
    for n, item in enumerate(data["objects"]):
        try:
            bbox = AxisAlignedBox(*map(float, item["bbox"]))
            objects.append(ObjectAnnotation(int(item["index"]), str(item["category"]), bbox))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"object #{n + 1}: {exc}", source) from None
    return {
        "image_id": str(data["image_id"]),
        "width": float(data["width"]),
        "height": float(data["height"]),
        "objects": tuple(objects),
    }


def parse_grasp_line(line: str, source: str = "<grasp>", lineno: Optional[int] = None,
                     rect_tol: float = 0.02) -> GraspAnnotation:
    tokens = line.split()
    if len(tokens) != 10:
        raise ParseError(f"expected 10 fields, got {len(tokens)}", source, lineno)
    try:
        coords = [float(t) for t in tokens[:8]]
    except ValueError:
        raise ParseError("vertex coordinates must be numbers", source, lineno) from None
    if tokens[8] not in ("0", "1"):
        raise ParseError(f"hard flag must be 0 or 1, got {tokens[8]!r}", source, lineno)
    if not tokens[9].isdigit():
        raise ParseError(f"object index must be an unsigned integer, got {tokens[9]!r}", source, lineno)
    quad = [(coords[i], coords[i + 1]) for i in range(0, 8, 2)]
    try:
        rect = vertices_to_rect(quad, rect_tol)
    except NotARectangle as exc:
        raise ValidationError(f"{source}:{lineno}: {exc}") from None
    return GraspAnnotation(rect, tokens[8] == "1", int(tokens[9]))


def parse_grasps(doc: str, source: str = "<grasp>", rect_tol: float = 0.02) -> List[GraspAnnotation]:
    out = []
    for lineno, line in enumerate(doc.splitlines(), start=1):
        if not line.strip():
            continue
        out.append(parse_grasp_line(line, source, lineno, rect_tol))
    return out


def parse_scene(object_doc: str, grasp_doc: str, source: str = "<scene>",
                rect_tol: float = 0.02) -> SceneAnnotation:
    head = parse_objects(object_doc, source + ".objects")
    grasps = parse_grasps(grasp_doc, source + ".grasp", rect_tol)
    scene = SceneAnnotation(head["image_id"], head["width"], head["height"],
                            head["objects"], tuple(grasps))
    return validate_scene(scene)


def format_grasp_line(g: GraspAnnotation) -> str:
    coords = [fmt_num(c) for p in rect_to_vertices(g.rect) for c in p]
    return " ".join(coords + ["1" if g.hard else "0", str(g.owner_index)])


def write_scene(s: SceneAnnotation) -> Tuple[str, str]:
    objects = {
        "image_id": s.image_id,
        "width": s.width,
        "height": s.height,
        "objects": [
            {"index": o.index, "category": o.category, "bbox": o.bbox.as_list()}
            for o in s.objects
        ],
    }
    object_doc = json.dumps(objects, indent=2) + "\n"
    grasp_doc = "".join(format_grasp_line(g) + "\n" for g in s.grasps)
    return object_doc, grasp_doc


# ---- dataset directories ---------------------------------------------------


def load_scene(root: Path, image_id: str, rect_tol: float = 0.02) -> SceneAnnotation:
    ann = Path(root) / "annotations"
    obj_path = ann / f"{image_id}.objects"
    grasp_path = ann / f"{image_id}.grasp"
    if not obj_path.is_file():
        raise ParseError("object file not found", str(obj_path))
    grasp_doc = grasp_path.read_text(encoding="utf-8") if grasp_path.is_file() else ""
    return parse_scene(obj_path.read_text(encoding="utf-8"), grasp_doc,
                       str(ann / image_id), rect_tol)


def read_index(root: Path) -> List[str]:
    path = Path(root) / "index"
    if not path.is_file():
        raise ParseError("dataset index not found", str(path))
    return [ln.strip() for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]


def load_dataset(root, rect_tol: float = 0.02, jobs: int = 1) -> List[SceneAnnotation]:
    ids = read_index(root)
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(lambda i: load_scene(root, i, rect_tol), ids))
    return [load_scene(root, i, rect_tol) for i in ids]


def write_dataset(root, scenes: Sequence[SceneAnnotation],
                  split: Optional[Dict[str, str]] = None) -> None:
    root = Path(root)
    ann = root / "annotations"
    ann.mkdir(parents=True, exist_ok=True)
    for s in scenes:
        obj_doc, grasp_doc = write_scene(s)
        _write_lf(ann / f"{s.image_id}.objects", obj_doc)
        _write_lf(ann / f"{s.image_id}.grasp", grasp_doc)
    _write_lf(root / "index", "".join(s.image_id + "\n" for s in scenes))
    if split:
        _write_lf(root / "split", "".join(f"{s.image_id} {split[s.image_id]}\n" for s in scenes))


def read_split(root) -> Dict[str, str]:
    path = Path(root) / "split"
    if not path.is_file():
        return {}
    out = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ParseError("expected '<image_id> <subset>'", str(path), lineno)
        out[parts[0]] = parts[1]
    return out


def _write_lf(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# ---- geometric augmentation ------------------------------------------------


def _point_map(t: str, width: float, height: float):
    if t == "hflip":
        return lambda x, y: (width - x, y), (width, height)
    if t == "rot90":
        return lambda x, y: (height - y, x), (height, width)
    if t == "rot180":
        return lambda x, y: (width - x, height - y), (width, height)
    if t == "rot270":
        return lambda x, y: (y, width - x), (height, width)
    raise ValueError(f"unknown transform {t!r}; choose from {TRANSFORMS}")


def _map_angle(t: str, theta: float) -> float:
    if t == "hflip":
        return -theta
    if t == "rot90":
        return theta + 90.0
    if t == "rot270":
        return theta - 90.0
    return theta


def augment(s: SceneAnnotation, t: str) -> SceneAnnotation:
    """Apply a flip or quarter-turn to every box and grasp of a scene.

    ``rot90`` sends (x, y) to (H - y, x), which turns the grasp axis by +90
    degrees in image coordinates.
    """
    fn, (new_w, new_h) = _point_map(t, s.width, s.height)
    objects = []
    for o in s.objects:
        xa, ya = fn(o.bbox.x_min, o.bbox.y_min)
        xb, yb = fn(o.bbox.x_max, o.bbox.y_max)
        box = AxisAlignedBox(min(xa, xb), min(ya, yb), max(xa, xb), max(ya, yb))
        objects.append(replace(o, bbox=box))
    grasps = []
    for g in s.grasps:
        x, y = fn(g.rect.x, g.rect.y)
        rect = OrientedRect(x, y, g.rect.w, g.rect.h, _map_angle(t, g.rect.theta))
        grasps.append(replace(g, rect=rect))
    return SceneAnnotation(s.image_id, new_w, new_h, tuple(objects), tuple(grasps))


def scale_scene(s: SceneAnnotation, short_side: float) -> SceneAnnotation:
    """Uniformly rescale so that the shorter image side equals ``short_side``."""
    if not short_side > 0:
        raise ValueError("short_side must be positive")
    f = short_side / min(s.width, s.height)
    if f == 1.0:
        return s

    def sb(b: AxisAlignedBox) -> AxisAlignedBox:
        return AxisAlignedBox(b.x_min * f, b.y_min * f, b.x_max * f, b.y_max * f)

    objects = tuple(replace(o, bbox=sb(o.bbox)) for o in s.objects)
    grasps = tuple(
        replace(g, rect=OrientedRect(g.rect.x * f, g.rect.y * f, g.rect.w * f, g.rect.h * f, g.rect.theta))
        for g in s.grasps
    )
    return SceneAnnotation(s.image_id, s.width * f, s.height * f, objects, grasps)
