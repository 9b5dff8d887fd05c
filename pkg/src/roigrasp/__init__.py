"""Geometry, assignment, suppression, loss and evaluation tooling for
RoI-based multi-object grasp detection."""

from roigrasp.geometry import (
    AxisAlignedBox,
    OrientedRect,
    angle_distance,
    box_iou,
    contains_point,
    rect_to_vertices,
    rotated_iou,
    vertices_to_rect,
)

__version__ = "0.1.0"

__all__ = [
    "AxisAlignedBox",
    "OrientedRect",
    "angle_distance",
    "box_iou",
    "contains_point",
    "rect_to_vertices",
    "rotated_iou",
    "vertices_to_rect",
]
