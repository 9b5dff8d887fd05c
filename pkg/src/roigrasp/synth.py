"""Seeded synthetic scenes, perturbed detections and brute-force reference oracles.

Randomness comes only from ``random.Random(seed).random()`` (MT19937), whose
output sequence Python keeps stable across versions and platforms. Uniform,
integer and Gaussian draws are derived from it here rather than through
library helpers whose algorithms may change. Generated geometry sits on a
1/64-pixel (and 1/64-degree) lattice so that flips, quarter turns and the
text formats are exact.

The ``oracle_*`` functions recompute results by exhaustive enumeration. They
are deliberately slow and share no code with the modules they check beyond
the geometry primitives.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from roigrasp.anchors import AnchorGrid
from roigrasp.dataset import GraspAnnotation, ObjectAnnotation, SceneAnnotation, validate_scene
from roigrasp.geometry import AxisAlignedBox, OrientedRect, angle_distance, box_iou, rotated_iou
from roigrasp.metrics import (
    LAMR_REFS,
    MISS_RATE_FLOOR,
    CurvePoint,
    EvalCriteria,
    EvalCurve,
    EvalReport,
)
from roigrasp.records import DetectionRecord, ScoredGrasp

LATTICE = 64.0

VMRD_CATEGORIES = (
    "box", "banana", "notebook", "screwdriver", "toothpaste", "apple", "stapler",
    "mobile phone", "bottle", "pen", "mouse", "umbrella", "remote controller",
    "cans", "tape", "knife", "wrench", "cup", "charger", "badminton", "wallet",
    "wrist developer", "glasses", "pliers", "headset", "toothbrush", "card",
    "paper", "towel", "shaver", "watch",
)


def q(v: float) -> float:
    return round(v * LATTICE) / LATTICE


class SynthRng:
    """Draws built on MT19937 ``random()`` only."""

    def __init__(self, seed: int):
        self._r = random.Random(seed)
        self._spare: Optional[float] = None

    def random(self) -> float:
        return self._r.random()

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self._r.random()

    def integer(self, lo: int, hi: int) -> int:
        """Uniform on the closed range [lo, hi]."""
        return lo + min(int(self._r.random() * (hi - lo + 1)), hi - lo)

    def choice(self, seq):
        return seq[self.integer(0, len(seq) - 1)]

    def bernoulli(self, p: float) -> bool:
        return self._r.random() < p

    def normal(self, sigma: float = 1.0) -> float:
        if self._spare is not None:
            z, self._spare = self._spare, None
            return sigma * z
        u1 = 1.0 - self._r.random()
        u2 = self._r.random()
        rad = math.sqrt(-2.0 * math.log(u1))
        self._spare = rad * math.sin(2.0 * math.pi * u2)
        return sigma * rad * math.cos(2.0 * math.pi * u2)


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_scenes: int = 10
    width: float = 640.0
    height: float = 480.0
    objects_per_scene: Tuple[int, int] = (2, 5)
    grasps_per_object: Tuple[int, int] = (1, 4)
    overlap_bias: float = 0.3
    object_size: Tuple[float, float] = (60.0, 160.0)
    grasp_width: Tuple[float, float] = (16.0, 48.0)
    grasp_height: Tuple[float, float] = (8.0, 20.0)
    hard_rate: float = 0.2
    n_categories: int = 31
    detect_prob: float = 0.9
    box_jitter: float = 2.0
    grasp_jitter: float = 2.0
    angle_jitter: float = 5.0
    angle_offset: float = 0.0
    category_confusion: float = 0.0
    fp_rate: float = 0.3
    fp_slots: int = 3
    extra_grasps: int = 2
    score_true: Tuple[float, float] = (0.4, 1.0)
    score_false: Tuple[float, float] = (0.05, 0.8)
    score_levels: int = 256
    val_fraction: float = 0.1

    def __post_init__(self):
        for name in ("objects_per_scene", "grasps_per_object", "object_size", "grasp_width",
                     "grasp_height", "score_true", "score_false"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} range is empty: {(lo, hi)}")
            object.__setattr__(self, name, (lo, hi))
        if self.objects_per_scene[0] < 1:
            raise ValueError("objects_per_scene must start at 1 or more")
        for name in ("overlap_bias", "hard_rate", "detect_prob", "category_confusion", "fp_rate",
                     "val_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if not 1 <= self.n_categories <= len(VMRD_CATEGORIES):
            raise ValueError(f"n_categories must lie in [1, {len(VMRD_CATEGORIES)}]")
        if self.n_scenes < 0:
            raise ValueError("n_scenes must be non-negative")

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown synth config keys: {sorted(unknown)}")
        conv = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
        return cls(**conv)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def replace(self, **changes) -> "SynthConfig":
        data = asdict(self)
        data.update(changes)
        return SynthConfig(**data)


def load_config(path) -> SynthConfig:
    return SynthConfig.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# ---- scenes ----------------------------------------------------------------


def _overlap_area(a: AxisAlignedBox, b: AxisAlignedBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    return iw * ih if iw > 0 and ih > 0 else 0.0


def _box_at(cx: float, cy: float, w: float, h: float, cfg: SynthConfig) -> AxisAlignedBox:
    x0 = min(max(q(cx - w / 2), 0.0), cfg.width - w)
    y0 = min(max(q(cy - h / 2), 0.0), cfg.height - h)
    return AxisAlignedBox(x0, y0, x0 + w, y0 + h)


def _place(rng: SynthRng, cfg: SynthConfig, prior: List[AxisAlignedBox], overlap: bool) -> AxisAlignedBox:
    lo, hi = cfg.object_size
    shrink = 1.0
    for _ in range(20):
        for _ in range(200):
            w = q(min(rng.uniform(lo, hi) * shrink, cfg.width))
            h = q(min(rng.uniform(lo, hi) * shrink, cfg.height))
            w, h = max(w, 4.0), max(h, 4.0)
            if overlap:
                other = rng.choice(prior)
                box = _box_at(rng.uniform(other.x_min, other.x_max), rng.uniform(other.y_min, other.y_max), w, h, cfg)
                if _overlap_area(box, other) > 0:
                    return box
            else:
                box = _box_at(rng.uniform(w / 2, cfg.width - w / 2), rng.uniform(h / 2, cfg.height - h / 2), w, h, cfg)
                if all(_overlap_area(box, p) == 0 for p in prior):
                    return box
        shrink *= 0.8
    raise RuntimeError("could not place object; image too crowded for the configured sizes")


def _grasp_in(rng: SynthRng, cfg: SynthConfig, box: AxisAlignedBox) -> OrientedRect:
    cx = q(rng.uniform(box.x_min + 0.2 * box.width, box.x_max - 0.2 * box.width))
    cy = q(rng.uniform(box.y_min + 0.2 * box.height, box.y_max - 0.2 * box.height))
    w = q(rng.uniform(*cfg.grasp_width))
    h = q(rng.uniform(*cfg.grasp_height))
    theta = q(rng.uniform(-90.0, 90.0))
    return OrientedRect(cx, cy, max(w, 1.0), max(h, 1.0), theta)


def generate_scenes(cfg: SynthConfig) -> List[SceneAnnotation]:
    rng = SynthRng(cfg.seed)
    cats = VMRD_CATEGORIES[: cfg.n_categories]
    scenes = []
    for i in range(cfg.n_scenes):
        n_obj = rng.integer(*cfg.objects_per_scene)
        boxes: List[AxisAlignedBox] = []
        objects, grasps = [], []
        for j in range(n_obj):
            overlap = bool(boxes) and rng.bernoulli(cfg.overlap_bias)
            box = _place(rng, cfg, boxes, overlap)
            boxes.append(box)
            objects.append(ObjectAnnotation(j + 1, rng.choice(cats), box))
            for _ in range(rng.integer(*cfg.grasps_per_object)):
                grasps.append(GraspAnnotation(_grasp_in(rng, cfg, box), rng.bernoulli(cfg.hard_rate), j + 1))
        scene = SceneAnnotation(f"s{cfg.seed}_{i:05d}", cfg.width, cfg.height, tuple(objects), tuple(grasps))
        scenes.append(validate_scene(scene))
    return scenes


def split_of(cfg: SynthConfig, scenes: Sequence[SceneAnnotation]) -> Dict[str, str]:
    n_val = int(round(len(scenes) * cfg.val_fraction))
    cut = len(scenes) - n_val
    return {s.image_id: ("train" if i < cut else "val") for i, s in enumerate(scenes)}


# ---- detections ------------------------------------------------------------


def _score(rng: SynthRng, lo_hi: Tuple[float, float], levels: int) -> float:
    s = rng.uniform(*lo_hi)
    return min(1.0, max(0.0, math.floor(s * levels) / levels))


def _jitter_box(rng: SynthRng, box: AxisAlignedBox, sigma: float, cfg: SynthConfig) -> AxisAlignedBox:
    xs = sorted((box.x_min + rng.normal(sigma), box.x_max + rng.normal(sigma)))
    ys = sorted((box.y_min + rng.normal(sigma), box.y_max + rng.normal(sigma)))
    x0, x1 = max(0.0, xs[0]), min(cfg.width, xs[1])
    y0, y1 = max(0.0, ys[0]), min(cfg.height, ys[1])
    if x1 - x0 < 1.0 or y1 - y0 < 1.0:
        return box
    return AxisAlignedBox(x0, y0, x1, y1)


def _jitter_grasp(rng: SynthRng, g: OrientedRect, sigma: float, angle_sigma: float,
                  angle_offset: float = 0.0) -> OrientedRect:
    return OrientedRect(g.x + rng.normal(sigma), g.y + rng.normal(sigma), g.w, g.h,
                        g.theta + angle_offset + rng.normal(angle_sigma))


def _passes(det: DetectionRecord, scene: SceneAnnotation, obj: ObjectAnnotation, crit: EvalCriteria) -> bool:
    top = det.top1_grasp
    if top is None or det.category != obj.category:
        return False
    if box_iou(det.bbox, obj.bbox) <= crit.box_iou_thresh:
        return False
    for g in scene.grasps:
        if g.owner_index != obj.index or (crit.ignore_hard and g.hard):
            continue
        if rotated_iou(top.rect, g.rect) > crit.jaccard_thresh and angle_distance(top.rect.theta, g.rect.theta) < crit.angle_thresh:
            return True
    return False


def generate_detections(scenes: Sequence[SceneAnnotation], cfg: SynthConfig,
                        criteria: EvalCriteria = EvalCriteria()) -> Tuple[List[DetectionRecord], List[bool]]:
    """Jittered copies of ground truth plus spurious boxes, with planted labels.

    A jittered detection is labelled TP when it passes every criterion against
    the object it was derived from; a spurious one when it passes against any
    object of the scene.
    """
    rng = SynthRng(cfg.seed + 1_000_003)
    cats = VMRD_CATEGORIES[: cfg.n_categories]
    dets: List[DetectionRecord] = []
    labels: List[bool] = []
    for scene in scenes:
        for obj in scene.objects:
            if not rng.bernoulli(cfg.detect_prob):
                continue
            box = _jitter_box(rng, obj.bbox, cfg.box_jitter, cfg)
            cat = obj.category
            if rng.bernoulli(cfg.category_confusion):
                cat = rng.choice([c for c in cats if c != obj.category] or [cat])
            score = _score(rng, cfg.score_true, cfg.score_levels)
            owned = scene.grasps_of(obj.index)
            cands = []
            if owned:
                base = rng.choice(owned).rect
                top_score = _score(rng, (0.55, 1.0), cfg.score_levels)
                cands.append(ScoredGrasp(_jitter_grasp(rng, base, cfg.grasp_jitter, cfg.angle_jitter, cfg.angle_offset), top_score))
                for _ in range(cfg.extra_grasps):
                    other = rng.choice(owned).rect
                    s = math.floor(top_score * rng.uniform(0.1, 0.9) * cfg.score_levels) / cfg.score_levels
                    cands.append(ScoredGrasp(_jitter_grasp(rng, other, 3 * cfg.grasp_jitter + 2, 30.0), s))
            det = DetectionRecord(scene.image_id, cat, score, box, tuple(cands))
            dets.append(det)
            labels.append(_passes(det, scene, obj, criteria))
        for _ in range(cfg.fp_slots):
            if not rng.bernoulli(cfg.fp_rate):
                continue
            lo, hi = cfg.object_size
            w, h = rng.uniform(lo, hi), rng.uniform(lo, hi)
            x0, y0 = rng.uniform(0.0, cfg.width - w), rng.uniform(0.0, cfg.height - h)
            box = AxisAlignedBox(x0, y0, x0 + w, y0 + h)
            g = OrientedRect(rng.uniform(x0, x0 + w), rng.uniform(y0, y0 + h),
                             rng.uniform(*cfg.grasp_width), rng.uniform(*cfg.grasp_height), rng.uniform(-90.0, 90.0))
            det = DetectionRecord(scene.image_id, rng.choice(cats), _score(rng, cfg.score_false, cfg.score_levels),
                                  box, (ScoredGrasp(g, _score(rng, (0.3, 1.0), cfg.score_levels)),))
            dets.append(det)
            labels.append(any(_passes(det, scene, o, criteria) for o in scene.objects))
    return dets, labels


# ---- oracles ---------------------------------------------------------------


def oracle_match_rois(rois: Sequence[AxisAlignedBox], objects: Sequence[ObjectAnnotation],
                      iou_thresh: float = 0.5) -> List[Tuple[Optional[int], float]]:
    out = []
    for roi in rois:
        scored = [(box_iou(roi, o.bbox), -pos, o.index) for pos, o in enumerate(objects)]
        good = [t for t in scored if t[0] > iou_thresh]
        if not good:
            out.append((None, 0.0))
        else:
            iou, _, idx = max(good)
            out.append((idx, iou))
    return out


def oracle_anchor_targets(grid: AnchorGrid, rects: Sequence[OrientedRect]) -> Dict[int, Tuple[str, Optional[int]]]:
    """Label per anchor index, scanning every anchor for every grasp."""
    roi = grid.roi
    sp = grid.spec
    cw, ch = roi.width / sp.grid_w, roi.height / sp.grid_h

    def cell_has(col, row, x, y):
        x0, y0 = roi.x_min + col * cw, roi.y_min + row * ch
        in_x = x0 <= x < x0 + cw or (col == sp.grid_w - 1 and x0 <= x <= roi.x_max)
        in_y = y0 <= y < y0 + ch or (row == sp.grid_h - 1 and y0 <= y <= roi.y_max)
        return in_x and in_y

    occupied = set()
    best: Dict[int, Tuple[float, int]] = {}
    for gi, r in enumerate(rects):
        cands = []
        for idx in range(len(grid)):
            cell = idx // sp.k
            col, row = cell % sp.grid_w, cell // sp.grid_w
            if cell_has(col, row, r.x, r.y):
                occupied.add(cell)
                cands.append((angle_distance(r.theta, grid.anchors[idx].theta), idx))
        d, idx = min(cands)
        if idx not in best or (d, gi) < best[idx]:
            best[idx] = (d, gi)
    out = {}
    for idx in range(len(grid)):
        if idx in best:
            out[idx] = ("graspable", best[idx][1])
        elif idx // sp.k in occupied:
            out[idx] = ("ignore", None)
        else:
            out[idx] = ("ungraspable", None)
    return out


def oracle_nms_keep(scores: Sequence[float], overlap: np.ndarray, thr: float) -> List[int]:
    """Greedy NMS defined recursively: an item survives iff no surviving
    higher-ranked item overlaps it by more than ``thr``."""
    n = len(scores)
    rank = {i: r for r, i in enumerate(sorted(range(n), key=lambda i: (-scores[i], i)))}
    memo: Dict[int, bool] = {}

    def survives(i: int) -> bool:
        if i not in memo:
            memo[i] = all(not survives(j) for j in range(n) if rank[j] < rank[i] and overlap[i, j] > thr)
        return memo[i]

    return sorted((i for i in range(n) if survives(i)), key=lambda i: rank[i])


def _oracle_match(subset: List[int], dets, scene, table, crit) -> int:
    """Greedy matching of one image's kept detections; returns TP count."""
    used = set()
    tp = 0
    for i in sorted(subset, key=lambda i: (-dets[i].score, i)):
        options = []
        for pos, o in enumerate(scene.objects):
            if o.index not in used and table[(i, pos)]:
                options.append((box_iou(dets[i].bbox, o.bbox), -pos, o.index))
        if options:
            used.add(max(options)[2])
            tp += 1
    return tp


def _oracle_table(dets, scenes_by_id, crit):
    table = {}
    for i, d in enumerate(dets):
        scene = scenes_by_id[d.image_id]
        for pos, o in enumerate(scene.objects):
            table[(i, pos)] = _passes(d, scene, o, crit)
    return table


def oracle_metrics(dets: Sequence[DetectionRecord], scenes: Sequence[SceneAnnotation],
                   criteria: EvalCriteria = EvalCriteria()) -> EvalReport:
    """Every metric recomputed by re-running matching at every threshold."""
    dets = list(dets)
    by_id = {s.image_id: s for s in scenes}
    table = _oracle_table(dets, by_id, criteria)
    n_img = len(scenes)
    n_gt = sum(len(s.objects) for s in scenes)

    points = []
    for t in sorted({d.score for d in dets}):
        tp = fp = 0
        for s in scenes:
            subset = [i for i, d in enumerate(dets) if d.image_id == s.image_id and d.score >= t]
            hit = _oracle_match(subset, dets, s, table, criteria)
            tp += hit
            fp += len(subset) - hit
        points.append(CurvePoint(t, fp / n_img if n_img else 0.0, 1.0 - tp / n_gt if n_gt else 0.0))
    points.append(CurvePoint(math.inf, 0.0, 1.0 if n_gt else 0.0))
    curve = EvalCurve(tuple(points))

    def miss_at(target):
        best = 1.0
        for p in points:
            if p.fppi <= target and p.miss_rate < best:
                best = p.miss_rate
        return best

    logs = [math.log(max(miss_at(r), MISS_RATE_FLOOR)) for r in LAMR_REFS]
    lamr_value = math.exp(math.fsum(logs) / len(logs))

    per_class = {}
    for cat in sorted({o.category for s in scenes for o in s.objects}):
        npos = sum(1 for s in scenes for o in s.objects if o.category == cat)
        ranked = sorted((i for i, d in enumerate(dets) if d.category == cat), key=lambda i: (-dets[i].score, i))
        recalls, precisions = [], []
        for k in range(1, len(ranked) + 1):
            prefix = ranked[:k]
            tp = sum(_oracle_match([i for i in prefix if dets[i].image_id == s.image_id], dets, s, table, criteria)
                     for s in scenes)
            recalls.append(tp / npos)
            precisions.append(tp / k)
        terms = []
        prev = 0.0
        for k, r in enumerate(recalls):
            if r != prev:
                terms.append((r - prev) * max(precisions[k:]))
                prev = r
        per_class[cat] = math.fsum(terms)

    m = math.fsum(per_class.values()) / len(per_class) if per_class else 0.0
    return EvalReport(
        curve=curve,
        mr0=miss_at(0.0),
        mr_minus1=miss_at(0.1),
        lamr=lamr_value,
        per_class_ap=per_class,
        map=m,
        n_images=n_img,
        n_gt=n_gt,
        n_detections=len(dets),
        criteria=criteria,
    )
