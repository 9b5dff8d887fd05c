"""Oriented grasp-rectangle arithmetic.

A grasp rectangle is ``(x, y, w, h, theta)``: centre in pixels, ``w`` along the
gripper-opening axis, ``h`` perpendicular to it, and ``theta`` in degrees from
the image x axis. Image coordinates have the origin at the top-left corner and
y growing downward. Rectangles are 180-degree periodic, so ``theta`` is kept in
the half-open interval (-90, 90].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

from roigrasp.errors import NotARectangle

Point = Tuple[float, float]
Quad = Tuple[Point, Point, Point, Point]

DEFAULT_RECT_TOL = 0.02
SLIVER_AREA = 1e-12


def normalize_angle(theta: float) -> float:
    """Map any angle in degrees onto the representative in (-90, 90]."""
    t = math.fmod(theta, 180.0)
    if t <= -90.0:
        t += 180.0
    elif t > 90.0:
        t -= 180.0
    return t


@dataclass(frozen=True)
class OrientedRect:
    x: float
    y: float
    w: float
    h: float
    theta: float

    def __post_init__(self):
        vals = (self.x, self.y, self.w, self.h, self.theta)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite rectangle field in {vals}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"rectangle extents must be positive, got w={self.w}, h={self.h}")
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))

    @property
    def center(self) -> Point:
        return (self.x, self.y)

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_tuple(self) -> Tuple[float, float, float, float, float]:
        return (self.x, self.y, self.w, self.h, self.theta)

    def swapped(self) -> "OrientedRect":
        """The same rectangle written with w and h exchanged."""
        return OrientedRect(self.x, self.y, self.h, self.w, self.theta + 90.0)

    def translated(self, dx: float, dy: float) -> "OrientedRect":
        return OrientedRect(self.x + dx, self.y + dy, self.w, self.h, self.theta)


@dataclass(frozen=True)
class AxisAlignedBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        vals = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box coordinate in {vals}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate box {vals}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> Point:
        return ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)

    def as_list(self) -> list:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    def to_rect(self) -> OrientedRect:
        cx, cy = self.center
        return OrientedRect(cx, cy, self.width, self.height, 0.0)


def same_rect(a: OrientedRect, b: OrientedRect, tol: float = 1e-6) -> bool:
    """Equality up to ``tol`` that accepts either side of the w/h swap."""

    def close(p: OrientedRect, q: OrientedRect) -> bool:
        return (
            abs(p.x - q.x) <= tol
            and abs(p.y - q.y) <= tol
            and abs(p.w - q.w) <= tol
            and abs(p.h - q.h) <= tol
            and angle_distance(p.theta, q.theta) <= tol
        )

    return close(a, b) or close(a, b.swapped())


def rect_to_vertices(r: OrientedRect) -> Quad:
    """Corners starting at local (-w/2, -h/2), in positive shoelace order."""
    c = math.cos(math.radians(r.theta))
    s = math.sin(math.radians(r.theta))
    hw, hh = r.w / 2.0, r.h / 2.0
    out = []
    for lx, ly in ((-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)):
        out.append((r.x + c * lx - s * ly, r.y + s * lx + c * ly))
    return tuple(out)


def polygon_area(poly: Sequence[Point]) -> float:
    """Signed shoelace area."""
    n = len(poly)
    acc = 0.0
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        acc += x1 * y2 - x2 * y1
    return acc / 2.0


def vertices_to_rect(q: Sequence[Point], rect_tol: float = DEFAULT_RECT_TOL) -> OrientedRect:
    """Recover ``(x, y, w, h, theta)`` from four corners.

    ``w`` and ``theta`` come from the first edge v1->v2, ``h`` from v2->v3.
    Raises NotARectangle when opposite edges differ by more than ``rect_tol``
    relative, or when adjacent edges are off-perpendicular by more than
    ``rect_tol`` in cosine.
    """
    if len(q) != 4:
        raise NotARectangle(f"expected 4 vertices, got {len(q)}")
    pts = [(float(p[0]), float(p[1])) for p in q]
    if not all(math.isfinite(c) for p in pts for c in p):
        raise NotARectangle("non-finite vertex coordinate")
    if abs(polygon_area(pts)) <= SLIVER_AREA:
        raise NotARectangle("degenerate quadrilateral (zero area)")

    edges = [(pts[(i + 1) % 4][0] - pts[i][0], pts[(i + 1) % 4][1] - pts[i][1]) for i in range(4)]
    lengths = [math.hypot(*e) for e in edges]
    if min(lengths) <= 0:
        raise NotARectangle("repeated vertex")
    for i in (0, 1):
        a, b = lengths[i], lengths[i + 2]
        if abs(a - b) > rect_tol * max(a, b):
            raise NotARectangle(f"opposite edges differ: {a:.6g} vs {b:.6g}")
    for i in range(4):
        e1, e2 = edges[i], edges[(i + 1) % 4]
        cos = (e1[0] * e2[0] + e1[1] * e2[1]) / (lengths[i] * lengths[(i + 1) % 4])
        if abs(cos) > rect_tol:
            raise NotARectangle(f"corner {i + 2} is not a right angle (cos={cos:.4g})")

    cx = sum(p[0] for p in pts) / 4.0
    cy = sum(p[1] for p in pts) / 4.0
    w = (lengths[0] + lengths[2]) / 2.0
    h = (lengths[1] + lengths[3]) / 2.0
    theta = math.degrees(math.atan2(edges[0][1], edges[0][0]))
    return OrientedRect(cx, cy, w, h, theta)


def angle_distance(theta_a: float, theta_b: float) -> float:
    """Smallest difference between two 180-periodic angles, in [0, 90]."""
    d = abs(math.fmod(theta_a - theta_b, 180.0))
    return min(d, 180.0 - d)


def contains_point(r: OrientedRect, p: Point, eps: float = 1e-9) -> bool:
    """Boundary-inclusive point-in-rectangle test."""
    c = math.cos(math.radians(r.theta))
    s = math.sin(math.radians(r.theta))
    dx, dy = p[0] - r.x, p[1] - r.y
    u = c * dx + s * dy
    v = -s * dx + c * dy
    slack = eps * max(1.0, r.w, r.h)
    return abs(u) <= r.w / 2.0 + slack and abs(v) <= r.h / 2.0 + slack


def _box_overlap(ax0, ay0, ax1, ay1, bx0, by0, bx1, by1) -> float:
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih


def box_iou(a: AxisAlignedBox, b: AxisAlignedBox) -> float:
    inter = _box_overlap(a.x_min, a.y_min, a.x_max, a.y_max, b.x_min, b.y_min, b.x_max, b.y_max)
    if inter == 0.0:
        return 0.0
    return inter / (a.area + b.area - inter)


def clip_convex(subject: Sequence[Point], clip: Sequence[Point]) -> list:
    """Sutherland-Hodgman clipping of ``subject`` by a convex ``clip`` polygon.

    ``clip`` must have positive shoelace orientation.
    """
    out = list(subject)
    n = len(clip)
    for i in range(n):
        if not out:
            break
        ex0, ey0 = clip[i]
        ex1, ey1 = clip[(i + 1) % n]
        dx, dy = ex1 - ex0, ey1 - ey0

        def side(p):
            return dx * (p[1] - ey0) - dy * (p[0] - ex0)

        inp = out
        out = []
        prev = inp[-1]
        sp = side(prev)
        for cur in inp:
            sc = side(cur)
            if sc >= 0:
                if sp < 0:
                    out.append(_cross_point(prev, cur, sp, sc))
                out.append(cur)
            elif sp >= 0:
                out.append(_cross_point(prev, cur, sp, sc))
            prev, sp = cur, sc
    return out


def _cross_point(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def intersection_area(a: OrientedRect, b: OrientedRect) -> float:
    """Area of a ∩ b via polygon clipping, computed in a's centred frame."""
    ox, oy = a.x, a.y
    qa = [(px - ox, py - oy) for px, py in rect_to_vertices(a)]
    qb = [(px - ox, py - oy) for px, py in rect_to_vertices(b)]
    poly = clip_convex(qa, qb)
    if len(poly) < 3:
        return 0.0
    area = abs(polygon_area(poly))
    return 0.0 if area < SLIVER_AREA else area


def _axis_aligned(r: OrientedRect) -> bool:
    return r.theta == 0.0 or r.theta == 90.0


def rotated_iou(a: OrientedRect, b: OrientedRect) -> float:
    """Jaccard index of two oriented rectangles."""
    if a == b:
        return 1.0
    if _axis_aligned(a) and _axis_aligned(b):
        # exact closed form; equals box_iou bit for bit when both angles are 0
        aw, ah = (a.w, a.h) if a.theta == 0.0 else (a.h, a.w)
        bw, bh = (b.w, b.h) if b.theta == 0.0 else (b.h, b.w)
        return box_iou(
            AxisAlignedBox(a.x - aw / 2, a.y - ah / 2, a.x + aw / 2, a.y + ah / 2),
            AxisAlignedBox(b.x - bw / 2, b.y - bh / 2, b.x + bw / 2, b.y + bh / 2),
        )
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    iou = inter / (a.area + b.area - inter)
    return min(1.0, max(0.0, iou))


def rect_bounds(r: OrientedRect) -> AxisAlignedBox:
    """Axis-aligned bounding box of an oriented rectangle."""
    q = rect_to_vertices(r)
    xs = [p[0] for p in q]
    ys = [p[1] for p in q]
    return AxisAlignedBox(min(xs), min(ys), max(xs), max(ys))
