"""Detection records and the line-delimited detection file.

Each line of a detection file is a JSON object::

    {"image_id": "0001", "detections": [
        {"category": "apple", "score": 0.93, "bbox": [x_min, y_min, x_max, y_max],
         "grasps": [{"rect": [x, y, w, h, theta], "score": 0.81}, ...]}]}
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

from roigrasp.errors import ParseError
from roigrasp.geometry import AxisAlignedBox, OrientedRect


@dataclass(frozen=True)
class ScoredGrasp:
    rect: OrientedRect
    score: float

    def __post_init__(self):
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise ValueError(f"grasp score must lie in [0, 1], got {self.score}")


@dataclass(frozen=True)
class DetectionRecord:
    image_id: str
    category: str
    score: float
    bbox: AxisAlignedBox
    grasps: Tuple[ScoredGrasp, ...] = ()

    def __post_init__(self):
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise ValueError(f"detection score must lie in [0, 1], got {self.score}")

    @property
    def top1_grasp(self) -> Optional[ScoredGrasp]:
        """Highest-scoring grasp candidate; the earliest wins ties."""
        best = None
        for g in self.grasps:
            if best is None or g.score > best.score:
                best = g
        return best


def record_to_dict(d: DetectionRecord) -> dict:
    return {
        "category": d.category,
        "score": d.score,
        "bbox": d.bbox.as_list(),
        "grasps": [{"rect": list(g.rect.as_tuple()), "score": g.score} for g in d.grasps],
    }


def record_from_dict(image_id: str, item: dict) -> DetectionRecord:
    grasps = tuple(
        ScoredGrasp(OrientedRect(*map(float, g["rect"])), float(g["score"]))
        for g in item.get("grasps", [])
    )
    return DetectionRecord(
        image_id,
        str(item["category"]),
        float(item["score"]),
        AxisAlignedBox(*map(float, item["bbox"])),
        grasps,
    )


def parse_detections(text: str, source: str = "<detections>") -> List[DetectionRecord]:
    """Parse a detection file; records keep file order."""
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
            image_id = str(data["image_id"])
            for item in data["detections"]:
                out.append(record_from_dict(image_id, item))
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, source, lineno) from None
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad detection record: {exc}", source, lineno) from None
    return out


def read_detections(path) -> List[DetectionRecord]:
    path = Path(path)
    if not path.is_file():
        raise ParseError("detection file not found", str(path))
    return parse_detections(path.read_text(encoding="utf-8"), str(path))


def group_by_image(dets: Iterable[DetectionRecord]) -> Dict[str, List[DetectionRecord]]:
    out: Dict[str, List[DetectionRecord]] = {}
    for d in dets:
        out.setdefault(d.image_id, []).append(d)
    return out


def format_detections(dets: Iterable[DetectionRecord], image_ids: Optional[List[str]] = None) -> str:
    """One line per image, images sorted by id unless an order is given."""
    groups = group_by_image(dets)
    order = image_ids if image_ids is not None else sorted(groups)
    lines = []
    for image_id in order:
        payload = {"image_id": image_id,
                   "detections": [record_to_dict(d) for d in groups.get(image_id, [])]}
        lines.append(json.dumps(payload, separators=(",", ":")))
    return "".join(line + "\n" for line in lines)
