"""Grasp-head losses with hand-derived gradients, and the multi-task total.

The grasp loss of one RoI is a smooth-L1 regression term over graspable
anchors plus a two-way softmax cross-entropy over labelled anchors. The image
loss adds the object-detection loss (computed elsewhere) to the mean grasp
loss over the RoIs that took part.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from roigrasp.assignment import GRASPABLE, IGNORE, UNGRASPABLE, AnchorTarget
from roigrasp.errors import InvalidCount, ShapeMismatch

GRASPABLE_COLUMN = 1


@dataclass
class GraspHeadOutput:
    """Per-anchor predictions: ``offsets`` is (N, 5), ``logits`` is (N, 2)
    with column 1 the graspable class."""

    offsets: np.ndarray
    logits: np.ndarray

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=float)
        self.logits = np.asarray(self.logits, dtype=float)
        n = self.offsets.shape[0] if self.offsets.ndim == 2 else -1
        if self.offsets.shape != (n, 5) or self.logits.shape != (n, 2):
            raise ShapeMismatch(
                f"offsets {self.offsets.shape} and logits {self.logits.shape} must be (N, 5) and (N, 2)"
            )
        if not np.all(np.isfinite(self.logits)):
            raise ValueError("logits must be finite")

    def __len__(self):
        return self.offsets.shape[0]


@dataclass(frozen=True)
class LossBreakdown:
    grasp_reg: float
    grasp_cls: float
    object_loss: float
    total: float


def smooth_l1(e):
    """0.5 e^2 inside the unit interval, |e| - 0.5 outside. Works elementwise."""
    a = np.abs(e)
    out = np.where(a < 1.0, 0.5 * np.square(e), a - 0.5)
    return float(out) if np.ndim(out) == 0 else out


def smooth_l1_grad(e):
    e = np.asarray(e, dtype=float)
    out = np.where(np.abs(e) < 1.0, e, np.sign(e))
    return float(out) if out.ndim == 0 else out


def _target_arrays(pred: GraspHeadOutput, targets: Sequence[AnchorTarget]):
    n = len(pred)
    if len(targets) != n:
        raise ShapeMismatch(f"{len(targets)} targets for {n} anchors")
    labels = np.full(n, -1, dtype=int)
    goal = np.zeros((n, 5))
    for t in targets:
        if not 0 <= t.anchor_index < n:
            raise ShapeMismatch(f"anchor index {t.anchor_index} out of range")
        if t.label == GRASPABLE:
            labels[t.anchor_index] = 1
            goal[t.anchor_index] = t.offsets.as_tuple()
        elif t.label == UNGRASPABLE:
            labels[t.anchor_index] = 0
        elif t.label != IGNORE:
            raise ValueError(f"unknown anchor label {t.label!r}")
    return labels, goal


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=1, keepdims=True))


def grasp_loss(pred: GraspHeadOutput, targets: Sequence[AnchorTarget]) -> Tuple[float, float]:
    """Return ``(grasp_reg, grasp_cls)`` for one RoI."""
    labels, goal = _target_arrays(pred, targets)
    pos = labels == 1
    reg = 0.0
    if pos.any():
        reg = float(smooth_l1(pred.offsets[pos] - goal[pos]).sum() / pos.sum())
    lab = labels >= 0
    cls = 0.0
    if lab.any():
        logp = _log_softmax(pred.logits[lab])
        y = np.where(labels[lab] == 1, GRASPABLE_COLUMN, 1 - GRASPABLE_COLUMN)
        cls = float(-logp[np.arange(len(y)), y].mean())
    return reg, cls


def grasp_loss_grad(pred: GraspHeadOutput, targets: Sequence[AnchorTarget]) -> Tuple[np.ndarray, np.ndarray]:
    """Gradients of ``grasp_reg`` w.r.t. offsets and of ``grasp_cls`` w.r.t. logits."""
    labels, goal = _target_arrays(pred, targets)
    d_off = np.zeros_like(pred.offsets)
    pos = labels == 1
    if pos.any():
        d_off[pos] = smooth_l1_grad(pred.offsets[pos] - goal[pos]) / pos.sum()
    d_log = np.zeros_like(pred.logits)
    lab = labels >= 0
    if lab.any():
        p = np.exp(_log_softmax(pred.logits[lab]))
        y = np.where(labels[lab] == 1, GRASPABLE_COLUMN, 1 - GRASPABLE_COLUMN)
        p[np.arange(len(y)), y] -= 1.0
        d_log[lab] = p / lab.sum()
    return d_off, d_log


def sample_targets(targets: Sequence[AnchorTarget], batch_size: int, positive_fraction: float = 0.5,
                   seed: Optional[int] = 0) -> List[AnchorTarget]:
    """Subsample labelled anchors to at most ``batch_size`` with a capped positive share.

    Anchors left out are relabelled ``ignore`` so they drop out of the
    classification term.
    """
    rng = random.Random(seed)
    pos = [t.anchor_index for t in targets if t.label == GRASPABLE]
    neg = [t.anchor_index for t in targets if t.label == UNGRASPABLE]
    n_pos = min(len(pos), int(batch_size * positive_fraction))
    n_neg = min(len(neg), batch_size - n_pos)
    chosen = set(rng.sample(pos, n_pos)) | set(rng.sample(neg, n_neg))
    out = []
    for t in targets:
        if t.label != IGNORE and t.anchor_index not in chosen:
            out.append(AnchorTarget(t.anchor_index, IGNORE))
        else:
            out.append(t)
    return out


def total_loss(object_loss: float, per_roi_grasp_losses: Sequence[float], n_roi: int) -> float:
    """Object loss plus the grasp losses weighted by 1 / n_roi."""
    losses = list(per_roi_grasp_losses)
    if losses and n_roi != len(losses):
        raise InvalidCount(f"n_roi={n_roi} but {len(losses)} RoI losses supplied")
    if not losses:
        return float(object_loss)
    lam = 1.0 / n_roi
    return float(object_loss) + lam * math.fsum(losses)


def loss_breakdown(object_loss: float, per_roi: Sequence[Tuple[float, float]]) -> LossBreakdown:
    """Combine per-RoI ``(reg, cls)`` pairs with the object loss."""
    per_roi = list(per_roi)
    n = len(per_roi)
    reg = math.fsum(r for r, _ in per_roi) / n if n else 0.0
    cls = math.fsum(c for _, c in per_roi) / n if n else 0.0
    total = total_loss(object_loss, [r + c for r, c in per_roi], n)
    return LossBreakdown(reg, cls, float(object_loss), total)
