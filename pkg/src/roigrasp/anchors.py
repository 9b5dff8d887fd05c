"""Oriented anchor grids over an RoI and the grasp offset codec.

Offsets follow the usual two-stage parameterisation with an angular term
scaled by the per-cell orientation spacing::

    t_x = (x - x_a) / w_a        t_w = ln(w / w_a)
    t_y = (y - y_a) / h_a        t_h = ln(h / h_a)
    t_theta = wrap(theta - theta_a) / (90 / k)

where ``wrap`` maps an angle difference into (-90, 90].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from roigrasp.geometry import AxisAlignedBox, OrientedRect, normalize_angle

ANCHOR_SIZES = (12.0, 24.0)


@dataclass(frozen=True)
class AnchorSpec:
    grid_w: int = 7
    grid_h: int = 7
    k: int = 4
    anchor_size: float = 12.0

    def __post_init__(self):
        if self.grid_w < 1 or self.grid_h < 1 or self.k < 1:
            raise ValueError(f"grid and orientation counts must be >= 1: {self}")
        if not self.anchor_size > 0:
            raise ValueError(f"anchor_size must be positive: {self.anchor_size}")

    @property
    def n_anchors(self) -> int:
        return self.grid_w * self.grid_h * self.k


@dataclass(frozen=True)
class GraspOffsets:
    t_x: float
    t_y: float
    t_w: float
    t_h: float
    t_theta: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.as_tuple()):
            raise ValueError(f"non-finite offsets {self.as_tuple()}")

    def as_tuple(self) -> Tuple[float, float, float, float, float]:
        return (self.t_x, self.t_y, self.t_w, self.t_h, self.t_theta)


def orientation_set(k: int) -> List[float]:
    """Anchor angles evenly covering the 180-degree period, centred in each bin."""
    step = 180.0 / k
    return [-90.0 + (m + 0.5) * step for m in range(k)]


@dataclass(frozen=True)
class AnchorGrid:
    roi: AxisAlignedBox
    spec: AnchorSpec
    anchors: Tuple[OrientedRect, ...]

    def flat_index(self, col: int, row: int, m: int) -> int:
        return (row * self.spec.grid_w + col) * self.spec.k + m

    def cell_of(self, index: int) -> Tuple[int, int]:
        """(col, row) of a flat anchor index."""
        cell = index // self.spec.k
        return cell % self.spec.grid_w, cell // self.spec.grid_w

    def cell_size(self) -> Tuple[float, float]:
        return self.roi.width / self.spec.grid_w, self.roi.height / self.spec.grid_h

    def as_array(self) -> np.ndarray:
        return np.array([a.as_tuple() for a in self.anchors], dtype=float)

    def __len__(self):
        return len(self.anchors)


def build_anchor_grid(roi: AxisAlignedBox, spec: AnchorSpec) -> AnchorGrid:
    cw, ch = roi.width / spec.grid_w, roi.height / spec.grid_h
    angles = orientation_set(spec.k)
    s = spec.anchor_size
    anchors = []
    for row in range(spec.grid_h):
        cy = roi.y_min + (row + 0.5) * ch
        for col in range(spec.grid_w):
            cx = roi.x_min + (col + 0.5) * cw
            for theta in angles:
                anchors.append(OrientedRect(cx, cy, s, s, theta))
    return AnchorGrid(roi, spec, tuple(anchors))


def encode(grasp: OrientedRect, anchor: OrientedRect, k: int) -> GraspOffsets:
    dtheta = normalize_angle(grasp.theta - anchor.theta)
    return GraspOffsets(
        (grasp.x - anchor.x) / anchor.w,
        (grasp.y - anchor.y) / anchor.h,
        math.log(grasp.w / anchor.w),
        math.log(grasp.h / anchor.h),
        dtheta / (90.0 / k),
    )


def decode(offsets: GraspOffsets, anchor: OrientedRect, k: int) -> OrientedRect:
    return OrientedRect(
        offsets.t_x * anchor.w + anchor.x,
        offsets.t_y * anchor.h + anchor.y,
        anchor.w * math.exp(offsets.t_w),
        anchor.h * math.exp(offsets.t_h),
        offsets.t_theta * (90.0 / k) + anchor.theta,
    )


def decode_all(offsets: np.ndarray, grid: AnchorGrid) -> List[OrientedRect]:
    """Decode an ``(N, 5)`` offset array against every anchor of ``grid``."""
    offsets = np.asarray(offsets, dtype=float)
    if offsets.shape != (len(grid), 5):
        raise ValueError(f"expected offsets of shape {(len(grid), 5)}, got {offsets.shape}")
    k = grid.spec.k
    return [decode(GraspOffsets(*map(float, row)), a, k) for row, a in zip(offsets, grid.anchors)]
