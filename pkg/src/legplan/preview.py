"""Cart-table preview model with piecewise-linear COP.

Within a phase of duration ``T`` the COP moves linearly by ``cop_shift`` and
the horizontal CoM follows the closed-form solution of
``xdd = omega^2 (x - p(t))``. All quantities live in the horizontal frame.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .geometry import convex_hull, polygon_lines, shrunk_support_lines

LEGS = ("LF", "RF", "LH", "RH")
DIAGONAL = {"LF": "RH", "RH": "LF", "RF": "LH", "LH": "RF"}


def nominal_offsets(length: float = 0.75, width: float = 0.5) -> dict[str, tuple[float, float]]:
    """Default foothold of each leg relative to the CoM (hip-to-hip spacing)."""
    hl, hw = 0.5 * length, 0.5 * width
    return {"LF": (hl, hw), "RF": (hl, -hw), "LH": (-hl, hw), "RH": (-hl, -hw)}


@dataclass(frozen=True)
class CartTableParams:
    height: float = 0.58
    gravity: float = 9.81

    def __post_init__(self):
        if not (self.height > 0 and self.gravity > 0):
            raise ValueError("height and gravity must be positive")

    @property
    def omega(self) -> float:
        return math.sqrt(self.gravity / self.height)


@dataclass(frozen=True)
class PreviewPhase:
    kind: str  # "stance" | "swing"
    duration: float
    cop_shift: tuple[float, float] = (0.0, 0.0)
    foot_shift: tuple[float, float] = (0.0, 0.0)
    swing_leg: str | None = None

    def __post_init__(self):
        if self.kind not in ("stance", "swing"):
            raise ValueError(f"unknown phase kind {self.kind!r}")
        if self.duration < 0:
            raise ValueError("phase duration must be non-negative")
        if (self.kind == "swing") != (self.swing_leg is not None):
            raise ValueError("swing phases carry exactly one swing leg")


@dataclass(frozen=True)
class ControlSequence:
    phases: tuple[PreviewPhase, ...]

    def __len__(self) -> int:
        return len(self.phases)

    def __iter__(self):
        return iter(self.phases)

    @property
    def total_duration(self) -> float:
        return sum(p.duration for p in self.phases)


@dataclass(frozen=True)
class SupportRegion:
    feet: Mapping[str, tuple[float, float]]
    lines: np.ndarray | None
    margin: float

    @property
    def polygon(self) -> list[tuple[float, float]]:
        return convex_hull(list(self.feet.values()))


@dataclass(frozen=True)
class PreviewState:
    """State at the start of a phase (or the end of the rollout).

    ``feet`` holds every leg's current ground position; ``support`` is the
    region active during the phase that starts here.
    """

    com: tuple[float, float]
    com_vel: tuple[float, float]
    cop: tuple[float, float]
    feet: Mapping[str, tuple[float, float]]
    support: SupportRegion | None = None
    time: float = 0.0
    phase: int = -1  # index into the control sequence, -1 for the terminal state

    @classmethod
    def at_rest(cls, com=(0.0, 0.0), offsets=None, cop=None) -> "PreviewState":
        offsets = offsets or nominal_offsets()
        feet = {leg: (com[0] + o[0], com[1] + o[1]) for leg, o in offsets.items()}
        # default COP: CoM projected on the support plane
        return cls(tuple(com), (0.0, 0.0), tuple(cop if cop is not None else com), feet)


def cop_at(phase: PreviewPhase, p0: Sequence[float], t: float) -> np.ndarray:
    T = phase.duration
    if not T > 0 or t < 0 or t > T:
        raise ValueError(f"t={t} outside [0, {T}]")
    return np.asarray(p0, dtype=float) + np.asarray(phase.cop_shift, dtype=float) * (t / T)


def _axis(x0, v0, p0, dp, T, w, t):
    k = (v0 * T - dp) / (2.0 * w * T)
    b1 = 0.5 * (x0 - p0) + k
    b2 = 0.5 * (x0 - p0) - k
    ep = math.exp(w * t)
    em = 1.0 / ep
    x = b1 * ep + b2 * em + p0 + dp / T * t
    v = w * (b1 * ep - b2 * em) + dp / T
    return x, v


def com_trajectory(s0: PreviewState, phase: PreviewPhase, params: CartTableParams, t: float):
    """CoM position and velocity at time ``t`` into ``phase``."""
    T = phase.duration
    if not T > 0:
        raise ValueError("zero-duration phases have no trajectory")
    if t < 0 or t > T:
        raise ValueError(f"t={t} outside [0, {T}]")
    w = params.omega
    xs, vs = [], []
    for a in range(2):
        x, v = _axis(s0.com[a], s0.com_vel[a], s0.cop[a], phase.cop_shift[a], T, w, t)
        xs.append(x)
        vs.append(v)
    return np.array(xs), np.array(vs)


def com_acceleration(x: Sequence[float], p: Sequence[float], params: CartTableParams) -> np.ndarray:
    return params.omega ** 2 * (np.asarray(x, dtype=float) - np.asarray(p, dtype=float))


def support_region(feet: Mapping[str, tuple[float, float]], r: float, strict: bool = True) -> SupportRegion:
    if strict:
        lines = shrunk_support_lines(list(feet.values()), r)
    else:
        hull = convex_hull(list(feet.values()))
        lines = polygon_lines(hull, r) if len(hull) >= 3 else None
    return SupportRegion(dict(feet), lines, r)


def rollout(
    s0: PreviewState,
    U: ControlSequence,
    r: float,
    params: CartTableParams,
    offsets: Mapping[str, tuple[float, float]] | None = None,
    strict: bool = True,
) -> list[PreviewState]:
    """Apply the phases of ``U`` in order, skipping zero-duration ones.

    Swing phases first move the swing foot to ``CoM + nominal offset +
    foot_shift`` (CoM at phase start) and then run with the remaining feet as
    support. Returns the initial state of every executed phase plus the final
    state. With ``strict`` an empty or degenerate shrunk region raises.
    """
    offsets = offsets or nominal_offsets()
    w = params.omega
    x, y = s0.com
    vx, vy = s0.com_vel
    px, py = s0.cop
    feet = dict(s0.feet)
    t = s0.time
    out: list[PreviewState] = []
    for idx, ph in enumerate(U.phases):
        T = ph.duration
        if T <= 0:
            continue
        if ph.kind == "swing":
            leg = ph.swing_leg
            o = offsets[leg]
            feet[leg] = (x + o[0] + ph.foot_shift[0], y + o[1] + ph.foot_shift[1])
            stance = {k: v for k, v in feet.items() if k != leg}
        else:
            stance = dict(feet)
        support = support_region(stance, r, strict)
        out.append(PreviewState((x, y), (vx, vy), (px, py), dict(feet), support, t, idx))
        dpx, dpy = ph.cop_shift
        x, vx = _axis(x, vx, px, dpx, T, w, T)
        y, vy = _axis(y, vy, py, dpy, T, w, T)
        px, py = px + dpx, py + dpy
        t += T
    out.append(PreviewState((x, y), (vx, vy), (px, py), dict(feet), support_region(feet, r, strict), t, -1))
    return out


def trunk_height_reference(feet_z: Sequence[float], clearance: float) -> float:
    """Mean stance-foot height raised by ``clearance``."""
    if len(feet_z) == 0:
        raise ValueError("no stance feet")
    return float(np.mean(feet_z)) + clearance


def sample_rollout(states: Sequence[PreviewState], U: ControlSequence, params: CartTableParams, dt: float = 0.01):
    """Rows ``(t, x, y, xd, yd, px, py, phase_id)`` sampled every ``dt``."""
    rows = []
    for s in states[:-1]:
        ph = U.phases[s.phase]
        T = ph.duration
        n = max(1, int(math.floor(T / dt + 1e-9)))
        for k in range(n):
            tau = k * dt
            xv, vv = com_trajectory(s, ph, params, tau)
            p = cop_at(ph, s.cop, tau)
            rows.append((s.time + tau, xv[0], xv[1], vv[0], vv[1], p[0], p[1], s.phase))
    last = states[-1]
    rows.append((last.time, *last.com, *last.com_vel, *last.cop, last.phase))
    return rows


def export_plan_csv(states, U, params, path: str | Path, dt: float = 0.01) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "x", "y", "xd", "yd", "px", "py", "phase_id"])
        for row in sample_rollout(states, U, params, dt):
            wr.writerow([f"{v:.9g}" if isinstance(v, float) else v for v in row])
