"""Greedy non-maximum suppression for grasp candidates and object boxes."""

from __future__ import annotations

from dataclasses import replace
from typing import List, Sequence, Tuple

from roigrasp.geometry import AxisAlignedBox, box_iou, rotated_iou
from roigrasp.records import DetectionRecord, ScoredGrasp, group_by_image

GRASP_NMS_IOU = 0.3
BOX_NMS_IOU = 0.3


def _greedy(scores: Sequence[float], overlap, iou_threshold: float) -> List[int]:
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    kept: List[int] = []
    for i in order:
        if all(overlap(i, j) <= iou_threshold for j in kept):
            kept.append(i)
    return kept


def nms_grasps(candidates: Sequence[ScoredGrasp], iou_threshold: float = GRASP_NMS_IOU) -> List[ScoredGrasp]:
    """Keep the best grasps whose pairwise rotated IoU stays at or below the threshold.

    Output is in descending score order; equal scores keep input order.
    """
    cands = list(candidates)
    kept = _greedy([c.score for c in cands],
                   lambda i, j: rotated_iou(cands[i].rect, cands[j].rect), iou_threshold)
    return [cands[i] for i in kept]


def nms_boxes(candidates: Sequence[Tuple[AxisAlignedBox, str, float]],
              iou_threshold: float = BOX_NMS_IOU) -> List[Tuple[AxisAlignedBox, str, float]]:
    """Per-class greedy NMS over ``(box, class, score)`` triples."""
    cands = list(candidates)

    def overlap(i, j):
        if cands[i][1] != cands[j][1]:
            return 0.0
        return box_iou(cands[i][0], cands[j][0])

    kept = _greedy([c[2] for c in cands], overlap, iou_threshold)
    return [cands[i] for i in kept]


def nms_detections(dets: Sequence[DetectionRecord], box_threshold: float = BOX_NMS_IOU,
                   grasp_threshold: float = GRASP_NMS_IOU, grasp_mode: str = "per_roi") -> List[DetectionRecord]:
    """Suppress duplicate objects per image, then duplicate grasps.

    ``grasp_mode="per_roi"`` runs grasp NMS inside each detection's own
    candidate list. ``"global"`` pools every surviving candidate of an image,
    so a grasp can also be suppressed by a better one from another object.
    Survivors keep their input order at both levels.
    """
    if grasp_mode not in ("per_roi", "global"):
        raise ValueError(f"unknown grasp_mode {grasp_mode!r}")
    out: List[DetectionRecord] = []
    for group in group_by_image(dets).values():
        kept = set(_greedy([d.score for d in group], _box_overlap(group), box_threshold))
        survivors = [d for i, d in enumerate(group) if i in kept]
        if grasp_mode == "per_roi":
            for d in survivors:
                keep = set(_greedy([g.score for g in d.grasps], _grasp_overlap(d.grasps), grasp_threshold))
                out.append(replace(d, grasps=tuple(g for i, g in enumerate(d.grasps) if i in keep)))
            continue
        # positions, not identities: the same grasp object may sit in two detections
        pooled = [(n, g) for n, d in enumerate(survivors) for g in d.grasps]
        keep = set(_greedy([g.score for _, g in pooled], _grasp_overlap([g for _, g in pooled]), grasp_threshold))
        for n, d in enumerate(survivors):
            mine = tuple(g for i, (owner, g) in enumerate(pooled) if owner == n and i in keep)
            out.append(replace(d, grasps=mine))
    return out


def _box_overlap(group: Sequence[DetectionRecord]):
    def overlap(i, j):
        if group[i].category != group[j].category:
            return 0.0
        return box_iou(group[i].bbox, group[j].bbox)
    return overlap


def _grasp_overlap(grasps: Sequence[ScoredGrasp]):
    return lambda i, j: rotated_iou(grasps[i].rect, grasps[j].rect)
