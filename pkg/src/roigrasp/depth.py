"""Grasp point and approach vector from a depth image.

The grasp point is the nearest valid pixel inside the grasp rectangle; the
approach vector is the camera-facing normal of a total-least-squares plane
fitted to the back-projected pixels around it. Camera frame: right-handed,
Z into the scene, pixel (u, v) at column u and row v.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple

import numpy as np

from roigrasp.errors import DegenerateNeighborhood, NoValidDepth, ParseError
from roigrasp.geometry import OrientedRect, rect_bounds

DEFAULT_RADIUS = 5


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Row-major depth in metres; non-finite entries are holes."""

    values: np.ndarray
    intrinsics: Intrinsics

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2 or vals.size == 0:
            raise ValueError(f"depth map must be a non-empty 2-D array, got shape {vals.shape}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def back_project(self, u, v, z):
        k = self.intrinsics
        return ((np.asarray(u) - k.cx) * z / k.fx, (np.asarray(v) - k.cy) * z / k.fy, z)

    def project(self, point) -> Tuple[float, float]:
        k = self.intrinsics
        x, y, z = point
        return (x * k.fx / z + k.cx, y * k.fy / z + k.cy)


@dataclass(frozen=True)
class GraspPose:
    point: Tuple[float, float, float]
    normal: Tuple[float, float, float]
    pixel: Tuple[int, int]


def min_depth_point(rect: OrientedRect, d: DepthMap) -> Tuple[int, int, float]:
    """Nearest valid pixel whose centre lies in ``rect``; ties go to the smallest (v, u)."""
    b = rect_bounds(rect)
    u0, u1 = max(0, math.floor(b.x_min)), min(d.width - 1, math.ceil(b.x_max))
    v0, v1 = max(0, math.floor(b.y_min)), min(d.height - 1, math.ceil(b.y_max))
    if u0 > u1 or v0 > v1:
        raise NoValidDepth(f"grasp {rect.as_tuple()} misses the {d.width}x{d.height} image")
    vv, uu = np.mgrid[v0:v1 + 1, u0:u1 + 1]
    c, s = math.cos(math.radians(rect.theta)), math.sin(math.radians(rect.theta))
    dx, dy = uu - rect.x, vv - rect.y
    slack = 1e-9 * max(1.0, rect.w, rect.h)
    inside = (np.abs(c * dx + s * dy) <= rect.w / 2 + slack) & (np.abs(-s * dx + c * dy) <= rect.h / 2 + slack)
    z = d.values[v0:v1 + 1, u0:u1 + 1]
    ok = inside & np.isfinite(z)
    if not ok.any():
        raise NoValidDepth(f"no valid depth inside grasp {rect.as_tuple()}")
    masked = np.where(ok, z, np.inf)
    flat = int(np.argmin(masked))
    r, q = divmod(flat, masked.shape[1])
    return int(uu[r, q]), int(vv[r, q]), float(z[r, q])


def surface_normal(d: DepthMap, u: int, v: int, radius: int = DEFAULT_RADIUS,
                   rank_tol: float = 1e-9) -> Tuple[float, float, float]:
    """Unit normal of the plane through the valid pixels of a square window."""
    u0, u1 = max(0, u - radius), min(d.width - 1, u + radius)
    v0, v1 = max(0, v - radius), min(d.height - 1, v + radius)
    if u0 > u1 or v0 > v1:
        raise DegenerateNeighborhood(f"window around ({u}, {v}) is outside the image")
    vv, uu = np.mgrid[v0:v1 + 1, u0:u1 + 1]
    z = d.values[v0:v1 + 1, u0:u1 + 1]
    ok = np.isfinite(z)
    if ok.sum() < 3:
        raise DegenerateNeighborhood(f"only {int(ok.sum())} valid pixels around ({u}, {v})")
    x, y, zz = d.back_project(uu[ok], vv[ok], z[ok])
    pts = np.column_stack([x, y, zz])
    centred = pts - pts.mean(axis=0)
    _, sv, vt = np.linalg.svd(centred, full_matrices=False)
    if sv.shape[0] < 3 or sv[1] <= rank_tol * max(sv[0], 1e-300):
        raise DegenerateNeighborhood(f"neighbourhood of ({u}, {v}) is collinear")
    n = vt[-1]
    n = n / np.linalg.norm(n)
    if n[2] > 0:
        n = -n
    return (float(n[0]), float(n[1]), float(n[2]))


def grasp_pose(rect: OrientedRect, d: DepthMap, radius: int = DEFAULT_RADIUS) -> GraspPose:
    u, v, z = min_depth_point(rect, d)
    x, y, zz = d.back_project(u, v, z)
    normal = surface_normal(d, u, v, radius)
    return GraspPose((float(x), float(y), float(zz)), normal, (u, v))


def plane_residual(d: DepthMap, u: int, v: int, radius: int, normal) -> float:
    """Largest distance of a window point from the fitted plane."""
    u0, u1 = max(0, u - radius), min(d.width - 1, u + radius)
    v0, v1 = max(0, v - radius), min(d.height - 1, v + radius)
    vv, uu = np.mgrid[v0:v1 + 1, u0:u1 + 1]
    z = d.values[v0:v1 + 1, u0:u1 + 1]
    ok = np.isfinite(z)
    pts = np.column_stack(d.back_project(uu[ok], vv[ok], z[ok]))
    dist = (pts - pts.mean(axis=0)) @ np.asarray(normal)
    return float(np.abs(dist).max())


# ---- file formats ----------------------------------------------------------


def read_intrinsics(path) -> Intrinsics:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
        return Intrinsics(float(data["fx"]), float(data["fy"]), float(data["cx"]), float(data["cy"]))
    except FileNotFoundError:
        raise ParseError("intrinsics file not found", str(path)) from None
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad intrinsics: {exc}", str(path)) from None


def millimetres_to_metres(raw: np.ndarray) -> np.ndarray:
    """Zero or non-finite readings become NaN holes."""
    out = np.asarray(raw, dtype=float) / 1000.0
    out[~np.isfinite(out) | (out <= 0)] = np.nan
    return out


def read_depth(path, intrinsics: Intrinsics) -> DepthMap:
    """Load a 16-bit PNG or a whitespace text matrix, both in millimetres."""
    path = Path(path)
    if not path.is_file():
        raise ParseError("depth file not found", str(path))
    if path.suffix.lower() == ".png":
        from PIL import Image

        with Image.open(path) as img:
            raw = np.array(img)
    else:
        try:
            raw = np.loadtxt(path, ndmin=2)
        except ValueError as exc:
            raise ParseError(f"bad depth matrix: {exc}", str(path)) from None
    return DepthMap(millimetres_to_metres(raw), intrinsics)


def write_depth_png(path, depth_m: np.ndarray) -> None:
    from PIL import Image

    mm = np.nan_to_num(np.asarray(depth_m) * 1000.0, nan=0.0)
    Image.fromarray(np.round(mm).astype(np.uint16)).save(path)
