"""Trunk roll/pitch planning under a flywheel model.

Angular acceleration of the trunk shifts the CMP away from the COP by
``(I @ wdot) x e_z / (m g)``. Bounding that shift by the stability margin
gives per-axis acceleration limits, which the cubic attitude splines respect.

Angle conventions: roll is positive with the left side up, pitch is positive
nose up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class InertiaModel:
    inertia: np.ndarray = field(default_factory=lambda: np.diag([4.0, 8.0, 10.0]))
    mass: float = 85.0
    gravity: float = 9.81

    def __post_init__(self):
        I = np.asarray(self.inertia, dtype=float)
        object.__setattr__(self, "inertia", I)
        if I.shape != (3, 3) or not np.allclose(I, I.T, atol=1e-12):
            raise ValueError("inertia must be a symmetric 3x3 matrix")
        if np.linalg.eigvalsh(I)[0] <= 0:
            raise ValueError("inertia must be positive definite")
        if not self.mass > 0:
            raise ValueError("mass must be positive")


def cmp_shift(im: InertiaModel, ang_acc: Sequence[float]) -> np.ndarray:
    """Horizontal CMP offset from the COP caused by ``ang_acc``."""
    tau = im.inertia @ np.asarray(ang_acc, dtype=float)
    return np.array([tau[1], -tau[0]]) / (im.mass * im.gravity)


def max_angular_acceleration(im: InertiaModel, r: float) -> tuple[float, float]:
    """Per-axis (roll, pitch) acceleration limits keeping the CMP shift <= r.

    Each bound saturates ``r`` on its own; driving both axes at their limits
    simultaneously can reach ``sqrt(2) * r``.
    """
    if r < 0:
        raise ValueError("margin must be non-negative")
    I = im.inertia
    mg = im.mass * im.gravity
    # shift magnitude for a unit acceleration about x (resp. y)
    gx = math.hypot(I[0, 0], I[1, 0])
    gy = math.hypot(I[0, 1], I[1, 1])
    return r * mg / gx, r * mg / gy


MIN_PHASE = 1e-9  # shorter phases are treated as skipped


class DegeneratePlaneError(ValueError):
    pass


def fit_support_plane(footholds: Sequence[Sequence[float]], yaw: float = 0.0) -> tuple[float, float]:
    """Least-squares plane through 3D footholds, returned as (roll, pitch)."""
    pts = np.asarray(footholds, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 3:
        raise DegeneratePlaneError("need at least 3 footholds")
    A = np.column_stack([pts[:, 0], pts[:, 1], np.ones(len(pts))])
    if np.linalg.matrix_rank(A[:, :2] - A[:, :2].mean(axis=0), tol=1e-9) < 2:
        raise DegeneratePlaneError("footholds are collinear")
    (gx, gy, _), *_ = np.linalg.lstsq(A, pts[:, 2], rcond=None)
    c, s = math.cos(yaw), math.sin(yaw)
    sx = c * gx + s * gy  # slope along the body x axis
    sy = -s * gx + c * gy
    norm = math.sqrt(1.0 + sx * sx + sy * sy)
    return math.asin(sy / norm), math.atan(sx)


@dataclass(frozen=True)
class CubicSegment:
    t0: float
    duration: float
    coeffs: tuple[float, float, float, float]  # c0 + c1 s + c2 s^2 + c3 s^3, s = t - t0

    def eval(self, t: float) -> tuple[float, float, float]:
        s = t - self.t0
        c0, c1, c2, c3 = self.coeffs
        return (
            c0 + s * (c1 + s * (c2 + s * c3)),
            c1 + s * (2 * c2 + 3 * c3 * s),
            2 * c2 + 6 * c3 * s,
        )


@dataclass(frozen=True)
class AttitudeSpline:
    roll: tuple[CubicSegment, ...]
    pitch: tuple[CubicSegment, ...]
    boundaries: tuple[float, ...]
    complete: bool

    @property
    def duration(self) -> float:
        return self.boundaries[-1]

    def _seg(self, segs, t):
        for seg in segs:
            if t <= seg.t0 + seg.duration:
                return seg
        return segs[-1]

    def evaluate(self, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(angles, rates, accelerations) for (roll, pitch) at time ``t``."""
        t = min(max(t, 0.0), self.duration)
        r = self._seg(self.roll, t).eval(t)
        p = self._seg(self.pitch, t).eval(t)
        return np.array([r[0], p[0]]), np.array([r[1], p[1]]), np.array([r[2], p[2]])


def _axis_plan(theta0: float, rate0: float, target: float, bound: float, durations) -> tuple[list[CubicSegment], bool]:
    segs = []
    theta, v0, t0 = theta0, rate0, 0.0
    for T in durations:
        if T <= MIN_PHASE:
            continue
        remaining = target - theta
        bT2 = bound * T * T
        # feasible displacement interval for a cubic ending at rest with both
        # endpoint accelerations within the bound
        lo = max((4 * v0 * T - bT2) / 6.0, (2 * v0 * T - bT2) / 6.0)
        hi = min((4 * v0 * T + bT2) / 6.0, (2 * v0 * T + bT2) / 6.0)
        if lo - hi > 1e-12 * (abs(lo) + abs(hi)):
            raise ValueError("initial rate cannot be stopped within the acceleration bound")
        D = min(max(remaining, lo), hi)
        c2 = (3 * D - 2 * v0 * T) / (T * T)
        c3 = (v0 * T - 2 * D) / (T ** 3)
        segs.append(CubicSegment(t0, T, (theta, v0, c2, c3)))
        theta += D
        v0 = 0.0
        t0 += T
    return segs, abs(target - theta) <= 1e-12 and v0 == 0.0


def plan_attitude(
    current: tuple[float, float, float, float],
    target: tuple[float, float],
    bounds: tuple[float, float],
    durations: Sequence[float],
) -> AttitudeSpline:
    """Cubic roll/pitch splines toward ``target`` across the given phases.

    ``current`` is ``(roll, pitch, roll_rate, pitch_rate)``. Each phase ends
    at rest and moves as far as its acceleration bound allows; if the phases
    run out first, the spline is returned with ``complete = False``.
    """
    if not any(T > MIN_PHASE for T in durations):
        raise ValueError("no positive-duration phase")
    if not (bounds[0] > 0 and bounds[1] > 0):
        raise ValueError("acceleration bounds must be positive")
    roll, ok_r = _axis_plan(current[0], current[2], target[0], bounds[0], durations)
    pitch, ok_p = _axis_plan(current[1], current[3], target[1], bounds[1], durations)
    edges = [0.0]
    for T in durations:
        if T > MIN_PHASE:
            edges.append(edges[-1] + T)
    return AttitudeSpline(tuple(roll), tuple(pitch), tuple(edges), ok_r and ok_p)


def phase_capacity(bound: float, T: float) -> float:
    """Largest displacement a rest-to-rest cubic can cover in ``T``."""
    return bound * T * T / 6.0
