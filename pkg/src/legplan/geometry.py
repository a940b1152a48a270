"""Small planar geometry helpers for support polygons."""

from __future__ import annotations

import itertools
import math
from typing import Sequence

import numpy as np


class SupportGeometryError(ValueError):
    pass


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points: Sequence[Sequence[float]]) -> list[tuple[float, float]]:
    """Counter-clockwise hull (monotone chain); collinear points dropped."""
    pts = sorted({(float(p[0]), float(p[1])) for p in points})
    if len(pts) < 3:
        return pts
    lower: list = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def polygon_lines(hull: Sequence[Sequence[float]], margin: float = 0.0) -> np.ndarray:
    """Rows ``(p, q, r)`` with interior ``p*x + q*y + r > 0``, each edge moved in by ``margin``.

    ``(p, q)`` is the unit inward normal, so a row evaluated at a point is its
    signed distance to the shrunk edge.
    """
    n = len(hull)
    rows = np.empty((n, 3))
    for k in range(n):
        ax, ay = hull[k]
        bx, by = hull[(k + 1) % n]
        ex, ey = bx - ax, by - ay
        length = math.hypot(ex, ey)
        nx, ny = -ey / length, ex / length
        rows[k] = (nx, ny, -(nx * ax + ny * ay) - margin)
    return rows


def chebyshev_radius(lines: np.ndarray) -> float:
    """Largest min-slack over the plane for unit-normal lines (may be negative)."""
    best = -math.inf
    for tri in itertools.combinations(range(len(lines)), 3):
        m = np.array([[lines[k][0], lines[k][1], -1.0] for k in tri])
        rhs = np.array([-lines[k][2] for k in tri])
        try:
            sol = np.linalg.solve(m, rhs)
        except np.linalg.LinAlgError:
            continue
        slack = lines[:, :2] @ sol[:2] + lines[:, 2]
        if np.all(slack >= sol[2] - 1e-12):
            best = max(best, float(sol[2]))
    return best


def shrunk_support_lines(feet: Sequence[Sequence[float]], r: float) -> np.ndarray:
    """Oriented lines of the stance-foot hull shrunk inward by ``r``."""
    if len(feet) < 3:
        raise SupportGeometryError("need at least 3 stance feet")
    hull = convex_hull(feet)
    if len(hull) < 3:
        raise SupportGeometryError("stance feet are collinear")
    lines = polygon_lines(hull, r)
    if chebyshev_radius(polygon_lines(hull)) <= r:
        raise SupportGeometryError(f"margin {r} empties the support polygon")
    return lines


def slacks(lines: np.ndarray, p: Sequence[float]) -> np.ndarray:
    return lines[:, 0] * p[0] + lines[:, 1] * p[1] + lines[:, 2]


def inradius(a, b, c) -> float:
    """Inscribed-circle radius of a 2D triangle (0 when degenerate)."""
    la = math.dist(b, c)
    lb = math.dist(a, c)
    lc = math.dist(a, b)
    s = 0.5 * (la + lb + lc)
    if s <= 0:
        return 0.0
    area = abs(_cross(a, b, c)) * 0.5
    return area / s
