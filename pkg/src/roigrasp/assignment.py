"""Matching rules between RoIs, objects, anchors and grasps."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

from roigrasp.anchors import AnchorGrid, GraspOffsets, encode
from roigrasp.dataset import GraspAnnotation, ObjectAnnotation, SceneAnnotation
from roigrasp.errors import GraspOutsideRoi
from roigrasp.geometry import AxisAlignedBox, OrientedRect, angle_distance, box_iou
from roigrasp.records import ScoredGrasp

ROI_MATCH_IOU = 0.5
BASELINE_MIN_SCORE = 0.25
EXECUTION_MIN_SCORE = 0.5

GRASPABLE = "graspable"
UNGRASPABLE = "ungraspable"
IGNORE = "ignore"


@dataclass(frozen=True)
class RoiMatch:
    roi_index: int
    object_index: Optional[int]
    iou: float

    @property
    def matched(self) -> bool:
        return self.object_index is not None


@dataclass(frozen=True)
class AnchorTarget:
    anchor_index: int
    label: str
    offsets: Optional[GraspOffsets] = None
    grasp_index: Optional[int] = None


def match_rois(rois: Sequence[AxisAlignedBox], objects: Sequence[ObjectAnnotation],
               iou_thresh: float = ROI_MATCH_IOU) -> List[RoiMatch]:
    """Match each RoI to the object box it overlaps most, if above ``iou_thresh``."""
    out = []
    for r, roi in enumerate(rois):
        best, best_iou = None, 0.0
        for obj in objects:
            iou = box_iou(roi, obj.bbox)
            if iou > iou_thresh and (best is None or iou > best_iou):
                best, best_iou = obj.index, iou
        out.append(RoiMatch(r, best, best_iou))
    return out


def roi_ground_truth(roi_match: RoiMatch, scene: SceneAnnotation) -> List[GraspAnnotation]:
    """Grasps owned by the matched object; other objects' grasps never leak in."""
    if roi_match.object_index is None:
        return []
    return scene.grasps_of(roi_match.object_index)


def locate_cell(grid: AnchorGrid, x: float, y: float) -> Tuple[int, int]:
    """Grid (col, row) whose cell holds the point; the far RoI edge belongs to the last cell."""
    roi = grid.roi
    if not (roi.x_min <= x <= roi.x_max and roi.y_min <= y <= roi.y_max):
        raise GraspOutsideRoi(f"grasp centre ({x}, {y}) outside RoI {roi.as_list()}")
    cw, ch = grid.cell_size()
    col = min(int((x - roi.x_min) // cw), grid.spec.grid_w - 1)
    row = min(int((y - roi.y_min) // ch), grid.spec.grid_h - 1)
    return col, row


def anchor_targets(grid: AnchorGrid, gt: Sequence[Union[GraspAnnotation, OrientedRect]],
                   k: Optional[int] = None, include_hard: bool = True) -> List[AnchorTarget]:
    """Label every anchor of ``grid`` as graspable, ungraspable or ignore.

    Each ground-truth grasp claims the anchor in the cell holding its centre
    whose orientation is closest (ties to the lower orientation index). When
    two grasps claim the same anchor the closer-angled one wins, then the
    earlier one. Remaining anchors of occupied cells are ignored, anchors of
    empty cells are ungraspable.
    """
    k = grid.spec.k if k is None else k
    rects = []
    for g in gt:
        if isinstance(g, GraspAnnotation):
            if g.hard and not include_hard:
                continue
            rects.append(g.rect)
        else:
            rects.append(g)

    occupied = set()
    claims = {}
    for gi, rect in enumerate(rects):
        col, row = locate_cell(grid, rect.x, rect.y)
        occupied.add((col, row))
        best_m, best_d = 0, math.inf
        for m in range(grid.spec.k):
            d = angle_distance(rect.theta, grid.anchors[grid.flat_index(col, row, m)].theta)
            if d < best_d:
                best_m, best_d = m, d
        idx = grid.flat_index(col, row, best_m)
        if idx not in claims or best_d < claims[idx][1]:
            claims[idx] = (gi, best_d)

    out = []
    for idx, anchor in enumerate(grid.anchors):
        if idx in claims:
            gi = claims[idx][0]
            out.append(AnchorTarget(idx, GRASPABLE, encode(rects[gi], anchor, k), gi))
        elif grid.cell_of(idx) in occupied:
            out.append(AnchorTarget(idx, IGNORE))
        else:
            out.append(AnchorTarget(idx, UNGRASPABLE))
    return out


def _dist(p, q) -> float:
    return math.hypot(p[0] - q[0], p[1] - q[1])


def _box_of(obj) -> AxisAlignedBox:
    return obj if isinstance(obj, AxisAlignedBox) else obj.bbox


def baseline_assign(objects: Sequence, grasps: Sequence[ScoredGrasp],
                    min_score: float = BASELINE_MIN_SCORE) -> List[Optional[ScoredGrasp]]:
    """Give each object the nearest-centred grasp scoring above ``min_score``.

    ``objects`` may hold boxes or anything with a ``bbox``. A grasp can be
    handed to several objects.
    """
    out = []
    for obj in objects:
        center = _box_of(obj).center
        best, best_d = None, math.inf
        for g in grasps:
            if g.score <= min_score:
                continue
            d = _dist(center, g.rect.center)
            if d < best_d:
                best, best_d = g, d
        out.append(best)
    return out


def select_execution_grasp(target, min_score: float = EXECUTION_MIN_SCORE) -> Optional[OrientedRect]:
    """The candidate nearest the target box centre among those scoring above ``min_score``."""
    pick = baseline_assign([target], list(target.grasps), min_score)[0]
    return None if pick is None else pick.rect
