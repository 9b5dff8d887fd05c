"""Joint object-and-grasp evaluation: FPPI / miss-rate curves, LAMR, AP with grasp.

A detection is a true positive when its class is right, its box overlaps an
unclaimed ground-truth object of that class with IoU above 0.5, and its top-1
grasp has Jaccard index above 0.25 and angle difference below 30 degrees with
at least one grasp owned by that object.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from roigrasp.dataset import SceneAnnotation
from roigrasp.errors import EmptyCurve, MissingGrasp, UnknownCategory, ValidationError
from roigrasp.geometry import OrientedRect, angle_distance, box_iou, rotated_iou
from roigrasp.records import DetectionRecord

LAMR_REFS = tuple(float(r) for r in np.logspace(-2.0, 0.0, 9))
MISS_RATE_FLOOR = 1e-10


@dataclass(frozen=True)
class EvalCriteria:
    box_iou_thresh: float = 0.5
    jaccard_thresh: float = 0.25
    angle_thresh: float = 30.0
    ignore_hard: bool = False

    def as_dict(self) -> dict:
        return {
            "angle_thresh": self.angle_thresh,
            "box_iou_thresh": self.box_iou_thresh,
            "ignore_hard": self.ignore_hard,
            "jaccard_thresh": self.jaccard_thresh,
        }


@dataclass(frozen=True)
class CurvePoint:
    threshold: float
    fppi: float
    miss_rate: float


@dataclass(frozen=True)
class EvalCurve:
    """Operating points in ascending threshold order.

    The last point has threshold ``inf``: the empty detection set, which sits
    at zero FPPI and miss rate one.
    """

    points: Tuple[CurvePoint, ...]

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["threshold", "fppi", "miss_rate"])
        for p in self.points:
            writer.writerow([repr(p.threshold), repr(p.fppi), repr(p.miss_rate)])
        return buf.getvalue()


@dataclass
class EvalReport:
    curve: EvalCurve
    mr0: float
    mr_minus1: float
    lamr: float
    per_class_ap: Dict[str, float]
    map: float
    n_images: int = 0
    n_gt: int = 0
    n_detections: int = 0
    criteria: EvalCriteria = field(default_factory=EvalCriteria)
    pr_curves: Dict[str, Tuple[np.ndarray, np.ndarray]] = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "criteria": self.criteria.as_dict(),
            "lamr": self.lamr,
            "map": self.map,
            "mr0": self.mr0,
            "mr_minus1": self.mr_minus1,
            "n_detections": self.n_detections,
            "n_gt": self.n_gt,
            "n_images": self.n_images,
            "per_class_ap": dict(sorted(self.per_class_ap.items())),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


# ---- adjudication ----------------------------------------------------------


def grasp_hits(rect: OrientedRect, scene: SceneAnnotation, object_index: int,
               criteria: EvalCriteria = EvalCriteria()) -> bool:
    """Does ``rect`` agree with at least one grasp owned by the object?"""
    for g in scene.grasps:
        if g.owner_index != object_index or (criteria.ignore_hard and g.hard):
            continue
        if (angle_distance(rect.theta, g.rect.theta) < criteria.angle_thresh
                and rotated_iou(rect, g.rect) > criteria.jaccard_thresh):
            return True
    return False


def adjudicate(det: DetectionRecord, scene: SceneAnnotation, used_gt: Set[int],
               criteria: EvalCriteria = EvalCriteria()) -> Optional[int]:
    """Match one detection against a scene.

    Returns the index of the claimed ground-truth object (a true positive,
    which is added to ``used_gt``) or None for a false positive. Among several
    qualifying objects the one with the largest box IoU wins, then the earliest.
    Detections of a scene must be fed in descending score order.
    """
    top = det.top1_grasp
    if top is None:
        raise MissingGrasp(f"detection of {det.category!r} in {det.image_id!r} has no grasp")
    best, best_iou = None, -1.0
    for obj in scene.objects:
        if obj.index in used_gt or obj.category != det.category:
            continue
        iou = box_iou(det.bbox, obj.bbox)
        if iou <= criteria.box_iou_thresh or iou <= best_iou:
            continue
        if grasp_hits(top.rect, scene, obj.index, criteria):
            best, best_iou = obj.index, iou
    if best is not None:
        used_gt.add(best)
    return best


def _ranked(dets: Sequence[DetectionRecord]) -> List[int]:
    return sorted(range(len(dets)), key=lambda i: -dets[i].score)


def _scene_map(scenes: Sequence[SceneAnnotation]) -> Dict[str, SceneAnnotation]:
    out = {}
    for s in scenes:
        if s.image_id in out:
            raise ValidationError(f"duplicate ground-truth image {s.image_id!r}")
        out[s.image_id] = s
    return out


def label_detections(dets: Sequence[DetectionRecord], scenes: Sequence[SceneAnnotation],
                     criteria: EvalCriteria = EvalCriteria()) -> List[bool]:
    """TP flag of every detection when all of them are kept.

    Because matching is greedy in score order, the outcome of a detection is
    the same under any score threshold that keeps it. Detections without a
    grasp count as false positives.
    """
    by_id = _scene_map(scenes)
    used: Dict[str, Set[int]] = {}
    flags = [False] * len(dets)
    for i in _ranked(dets):
        d = dets[i]
        if d.image_id not in by_id:
            raise ValidationError(f"detection refers to unknown image {d.image_id!r}")
        try:
            flags[i] = adjudicate(d, by_id[d.image_id], used.setdefault(d.image_id, set()),
                                  criteria) is not None
        except MissingGrasp:
            flags[i] = False
    return flags


# ---- FPPI / miss rate ------------------------------------------------------


def fppi_missrate_curve(dets: Sequence[DetectionRecord], scenes: Sequence[SceneAnnotation],
                        criteria: EvalCriteria = EvalCriteria()) -> EvalCurve:
    flags = label_detections(dets, scenes, criteria)
    n_img = len(scenes)
    n_gt = sum(len(s.objects) for s in scenes)
    order = _ranked(dets)
    points = [CurvePoint(math.inf, 0.0, 1.0 if n_gt else 0.0)]
    tp = fp = 0
    for pos, i in enumerate(order):
        if flags[i]:
            tp += 1
        else:
            fp += 1
        nxt = order[pos + 1] if pos + 1 < len(order) else None
        if nxt is not None and dets[nxt].score == dets[i].score:
            continue
        miss = 1.0 - tp / n_gt if n_gt else 0.0
        points.append(CurvePoint(dets[i].score, fp / n_img if n_img else 0.0, miss))
    points.reverse()
    return EvalCurve(tuple(points))


def mr_at(curve: EvalCurve, fppi_target: float) -> float:
    """Lowest miss rate among operating points with FPPI at most the target."""
    if not len(curve):
        raise EmptyCurve("curve has no operating points")
    rates = [p.miss_rate for p in curve if p.fppi <= fppi_target]
    if not rates:
        return 1.0
    return min(rates)


def lamr(curve: EvalCurve, refs: Sequence[float] = LAMR_REFS) -> float:
    """Geometric mean of miss rates sampled at log-spaced FPPI references."""
    if not len(curve):
        raise EmptyCurve("curve has no operating points")
    logs = [math.log(max(mr_at(curve, r), MISS_RATE_FLOOR)) for r in refs]
    return math.exp(math.fsum(logs) / len(logs))


# ---- average precision -----------------------------------------------------


def envelope_ap(recall: Sequence[float], precision: Sequence[float]) -> float:
    """Area under the monotone precision envelope, all points."""
    mrec = [0.0] + list(recall) + [1.0]
    mpre = [0.0] + list(precision) + [0.0]
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    terms = [(mrec[i + 1] - mrec[i]) * mpre[i + 1] for i in range(len(mrec) - 1) if mrec[i + 1] != mrec[i]]
    return math.fsum(terms)


def eleven_point_ap(recall: Sequence[float], precision: Sequence[float]) -> float:
    rec = np.asarray(recall, dtype=float)
    prec = np.asarray(precision, dtype=float)
    vals = []
    for t in np.linspace(0.0, 1.0, 11):
        mask = rec >= t
        vals.append(float(prec[mask].max()) if mask.any() else 0.0)
    return math.fsum(vals) / 11.0


def pr_points(dets: Sequence[DetectionRecord], scenes: Sequence[SceneAnnotation], category: str,
              criteria: EvalCriteria = EvalCriteria()) -> Tuple[List[float], List[float]]:
    npos = sum(1 for s in scenes for o in s.objects if o.category == category)
    if npos == 0:
        raise UnknownCategory(category)
    mine = [d for d in dets if d.category == category]
    flags = label_detections(mine, scenes, criteria)
    recall, precision = [], []
    tp = fp = 0
    for i in _ranked(mine):
        if flags[i]:
            tp += 1
        else:
            fp += 1
        recall.append(tp / npos)
        precision.append(tp / (tp + fp))
    return recall, precision


def ap_with_grasp(dets: Sequence[DetectionRecord], scenes: Sequence[SceneAnnotation], category: str,
                  criteria: EvalCriteria = EvalCriteria(), mode: str = "all") -> float:
    recall, precision = pr_points(dets, scenes, category, criteria)
    if mode == "all":
        return envelope_ap(recall, precision)
    if mode == "11point":
        return eleven_point_ap(recall, precision)
    raise ValueError(f"unknown AP mode {mode!r}")


def gt_categories(scenes: Iterable[SceneAnnotation]) -> List[str]:
    return sorted({o.category for s in scenes for o in s.objects})


def map_with_grasp(dets: Sequence[DetectionRecord], scenes: Sequence[SceneAnnotation],
                   criteria: EvalCriteria = EvalCriteria(), mode: str = "all") -> float:
    cats = gt_categories(scenes)
    if not cats:
        return 0.0
    return math.fsum(ap_with_grasp(dets, scenes, c, criteria, mode) for c in cats) / len(cats)


# ---- full report -----------------------------------------------------------


def evaluate(dets: Sequence[DetectionRecord], scenes: Sequence[SceneAnnotation],
             criteria: EvalCriteria = EvalCriteria(), score_floor: Optional[float] = None,
             ap_mode: str = "all") -> EvalReport:
    if score_floor is not None:
        dets = [d for d in dets if d.score >= score_floor]
    dets = list(dets)
    curve = fppi_missrate_curve(dets, scenes, criteria)
    per_class, pr = {}, {}
    for c in gt_categories(scenes):
        recall, precision = pr_points(dets, scenes, c, criteria)
        pr[c] = (np.asarray(recall), np.asarray(precision))
        per_class[c] = envelope_ap(recall, precision) if ap_mode == "all" else eleven_point_ap(recall, precision)
    m = math.fsum(per_class.values()) / len(per_class) if per_class else 0.0
    return EvalReport(
        curve=curve,
        mr0=mr_at(curve, 0.0),
        mr_minus1=mr_at(curve, 0.1),
        lamr=lamr(curve),
        per_class_ap=per_class,
        map=m,
        n_images=len(scenes),
        n_gt=sum(len(s.objects) for s in scenes),
        n_detections=len(dets),
        criteria=criteria,
        pr_curves=pr,
    )
