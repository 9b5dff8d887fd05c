import random

import numpy as np
import pytest
from hypothesis import strategies as st

from roigrasp.geometry import OrientedRect, rect_to_vertices

coord = st.floats(-500, 500, allow_nan=False, allow_infinity=False)
extent = st.floats(0.5, 200, allow_nan=False, allow_infinity=False)
angle = st.floats(-720, 720, allow_nan=False, allow_infinity=False)


@st.composite
def rects(draw):
    return OrientedRect(draw(coord), draw(coord), draw(extent), draw(extent), draw(angle))


@st.composite
def near_rect_pairs(draw):
    """Pairs of rectangles that usually overlap."""
    a = draw(rects())
    dx = draw(st.floats(-1.0, 1.0)) * a.w
    dy = draw(st.floats(-1.0, 1.0)) * a.h
    b = OrientedRect(a.x + dx, a.y + dy, draw(extent), draw(extent), draw(angle))
    return a, b


def random_rect(rng: random.Random, span=100.0, size=(1.0, 60.0)):
    return OrientedRect(rng.uniform(-span, span), rng.uniform(-span, span),
                        rng.uniform(*size), rng.uniform(*size), rng.uniform(-90, 90))


def random_overlapping_pair(rng: random.Random):
    a = random_rect(rng)
    b = OrientedRect(a.x + rng.uniform(-0.7, 0.7) * a.w, a.y + rng.uniform(-0.7, 0.7) * a.h,
                     rng.uniform(1.0, 60.0), rng.uniform(1.0, 60.0), rng.uniform(-90, 90))
    return a, b


def inside_mask(r: OrientedRect, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Half-plane test against the rectangle's corner list (no local-frame math)."""
    q = rect_to_vertices(r)
    mask = np.ones(xs.shape, dtype=bool)
    for i in range(4):
        (x0, y0), (x1, y1) = q[i], q[(i + 1) % 4]
        mask &= (x1 - x0) * (ys - y0) - (y1 - y0) * (xs - x0) >= 0
    return mask


def sampled_iou(a: OrientedRect, b: OrientedRect, unit_points: np.ndarray, shift=(0.0, 0.0)) -> float:
    """Quasi-Monte-Carlo Jaccard index.

    The unit square is mapped onto ``a`` through its corners, so every sample
    lies in ``a`` and the hit fraction times area(a) estimates the overlap.
    The map is affine, so each of b's edge tests is affine in the unit
    coordinates and no sample points are materialised.
    """
    q = np.array(rect_to_vertices(a))
    u, v = unit_points[:, 0], unit_points[:, 1]
    if any(shift):
        u, v = (u + shift[0]) % 1.0, (v + shift[1]) % 1.0
    o, e1, e2 = q[0], q[1] - q[0], q[3] - q[0]
    qb = rect_to_vertices(b)
    mask = np.ones(u.shape, dtype=bool)
    for i in range(4):
        (x0, y0), (x1, y1) = qb[i], qb[(i + 1) % 4]
        dx, dy = x1 - x0, y1 - y0
        # edge test dx*(py - y0) - dy*(px - x0) with p = o + u*e1 + v*e2
        c0 = dx * (o[1] - y0) - dy * (o[0] - x0)
        cu = dx * e1[1] - dy * e1[0]
        cv = dx * e2[1] - dy * e2[0]
        mask &= c0 + cu * u + cv * v >= 0
    inter = mask.mean() * abs(e1[0] * e2[1] - e1[1] * e2[0])
    return inter / (a.w * a.h + b.w * b.h - inter)


@pytest.fixture(scope="session")
def sobol_points():
    from scipy.stats import qmc

    pts = qmc.Sobol(d=2, scramble=True, seed=20180712).random_base2(20)
    return np.asfortranarray(pts)


# ---- acceptance bookkeeping ------------------------------------------------

_ACCEPTANCE = {}


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    _ACCEPTANCE[number] = (title, ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        title, ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}  ({detail})")
