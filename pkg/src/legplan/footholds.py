"""Greedy foothold selection along a body path.

Each candidate cell of an action's footstep region is scored by terrain
cost, support-triangle in-radius, shin collision and stance-plane
orientation; the cheapest cell wins.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .attitude import DegeneratePlaneError, fit_support_plane
from .body_planner import BodyPath, BodyState, Lattice, MotionPrimitive, region_cells
from .geometry import inradius
from .preview import LEGS, nominal_offsets
from .terrain import CostMap, HeightMap, OutOfBoundsError, UnknownCellError, height_at

GAIT = ("LF", "RH", "RF", "LH")
SHIN_BAND = 0.10
SHIN_HALF_WIDTH = 0.05


class FootholdError(RuntimeError):
    pass


@dataclass(frozen=True)
class FootstepCostWeights:
    terrain: float = 1.0
    support: float = 0.05
    collision: float = 1.0
    orientation: float = 0.5
    eps_r: float = 0.01

    def __post_init__(self):
        if min(self.terrain, self.support, self.collision, self.orientation) < 0:
            raise ValueError("footstep weights must be non-negative")
        if not self.eps_r > 0:
            raise ValueError("eps_r must be positive")


@dataclass(frozen=True)
class FootholdStep:
    index: int
    leg: str
    position: tuple[float, float, float]
    state: BodyState
    action: str


@dataclass
class FootholdPlan:
    steps: list[FootholdStep] = field(default_factory=list)
    initial_stance: dict[str, tuple[float, float, float]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.steps)


def next_leg(leg: str, gait: Sequence[str] = GAIT) -> str:
    return gait[(list(gait).index(leg) + 1) % len(gait)]


def support_partners(leg: str, gait: Sequence[str] = GAIT) -> tuple[str, str]:
    """The two legs that stay down with ``leg`` while the next leg in ``gait`` swings."""
    nxt = next_leg(leg, gait)
    others = tuple(k for k in LEGS if k not in (leg, nxt))
    return others[0], others[1]


def _shin_excess(cm: CostMap, xy, z: float, yaw: float) -> float:
    heights = cm.heights
    if heights is None:
        return 0.0
    I, J = region_cells(cm, (xy[0], xy[1], yaw), (-SHIN_BAND, 0.0, -SHIN_HALF_WIDTH, SHIN_HALF_WIDTH))
    if I.size == 0:
        return 0.0
    zb = heights[I, J]
    zb = zb[np.isfinite(zb)]
    if zb.size == 0:
        return 0.0
    return float(np.sum(np.maximum(zb - z, 0.0))) / zb.size


@dataclass(frozen=True)
class FootstepTerms:
    terrain: float
    support: float
    collision: float
    orientation: float

    def total(self, w: FootstepCostWeights) -> float:
        return (w.terrain * self.terrain + w.support * self.support
                + w.collision * self.collision + w.orientation * self.orientation)


def footstep_terms(
    cell: tuple[int, int],
    leg: str,
    stance: Mapping[str, Sequence[float]],
    cm: CostMap,
    hm: HeightMap,
    weights: FootstepCostWeights = FootstepCostWeights(),
    yaw: float = 0.0,
    gait: Sequence[str] = GAIT,
) -> FootstepTerms | None:
    """Cost terms for placing ``leg`` on costmap ``cell``; None when off the map or unknown."""
    i, j = cell
    if not (0 <= i < cm.spec.nx and 0 <= j < cm.spec.ny):
        return None
    xy = cm.spec.cell_center(i, j)
    try:
        z = height_at(hm, xy)
    except (OutOfBoundsError, UnknownCellError):
        return None
    a, b = support_partners(leg, gait)
    r_in = inradius(xy, tuple(stance[a][:2]), tuple(stance[b][:2]))
    c_st = 1.0 / (r_in + weights.eps_r)
    c_c = _shin_excess(cm, xy, z, yaw)
    pts = [tuple(stance[k][:3]) for k in LEGS if k != leg and len(stance[k]) >= 3] + [(xy[0], xy[1], z)]
    c_o = 0.0
    if len(pts) >= 3:
        try:
            roll, pitch = fit_support_plane(pts, yaw)
            c_o = abs(roll) + abs(pitch)
        except DegeneratePlaneError:
            c_o = 0.0
    return FootstepTerms(float(cm.total[i, j]), c_st, c_c, c_o)


def footstep_cost(cell, leg, stance, cm, hm, weights=FootstepCostWeights(), yaw=0.0, gait=GAIT) -> float:
    terms = footstep_terms(cell, leg, stance, cm, hm, weights, yaw, gait)
    return math.inf if terms is None else terms.total(weights)


def select_foothold(
    prim: MotionPrimitive,
    leg: str,
    state: BodyState,
    cm: CostMap,
    hm: HeightMap,
    stance: Mapping[str, Sequence[float]],
    weights: FootstepCostWeights = FootstepCostWeights(),
    lattice: Lattice = Lattice(),
    gait: Sequence[str] = GAIT,
) -> tuple[float, float, float]:
    """Cheapest cell of ``prim``'s region for ``leg`` at body ``state``.

    Ties go to the cell nearest the region centre, then to the smaller
    ``(i, j)`` index.
    """
    pose = lattice.pose(state)
    rect = prim.regions[leg]
    I, J = region_cells(cm, pose, rect)
    if I.size == 0:
        raise FootholdError(f"region of {leg} for {prim.id} is off the map")
    c, s = math.cos(pose[2]), math.sin(pose[2])
    rcx, rcy = 0.5 * (rect[0] + rect[1]), 0.5 * (rect[2] + rect[3])
    centre = (pose[0] + c * rcx - s * rcy, pose[1] + s * rcx + c * rcy)
    best, best_key = None, None
    for i, j in zip(I.tolist(), J.tolist()):
        cost = footstep_cost((i, j), leg, stance, cm, hm, weights, pose[2], gait)
        if not math.isfinite(cost):
            continue
        xy = cm.spec.cell_center(i, j)
        key = (cost, math.hypot(xy[0] - centre[0], xy[1] - centre[1]), i, j)
        if best_key is None or key < best_key:
            best, best_key = (i, j), key
    if best is None:
        raise FootholdError(f"no admissible cell for {leg} in {prim.id}")
    xy = cm.spec.cell_center(*best)
    return (xy[0], xy[1], height_at(hm, xy))


def nominal_stance(state: BodyState, hm: HeightMap, lattice: Lattice = Lattice(),
                   offsets: Mapping[str, tuple[float, float]] | None = None) -> dict[str, tuple[float, float, float]]:
    offsets = offsets or nominal_offsets()
    x, y, th = lattice.pose(state)
    c, s = math.cos(th), math.sin(th)
    out = {}
    for leg in LEGS:
        ox, oy = offsets[leg]
        fx, fy = x + c * ox - s * oy, y + s * ox + c * oy
        try:
            z = height_at(hm, (fx, fy))
        except (OutOfBoundsError, UnknownCellError):
            z = 0.0
        out[leg] = (fx, fy, z)
    return out


def plan_foothold_sequence(
    path: BodyPath,
    cm: CostMap,
    hm: HeightMap,
    weights: FootstepCostWeights = FootstepCostWeights(),
    gait: Sequence[str] = GAIT,
    lattice: Lattice = Lattice(),
    initial_stance: Mapping[str, Sequence[float]] | None = None,
) -> FootholdPlan:
    """One foothold per path edge, legs taken in ``gait`` order."""
    if not path.actions:
        stance0 = dict(initial_stance) if initial_stance else (
            nominal_stance(path.states[0], hm, lattice) if path.states else {})
        return FootholdPlan([], stance0)
    stance = dict(initial_stance) if initial_stance else nominal_stance(path.states[0], hm, lattice)
    plan = FootholdPlan([], dict(stance))
    for k, prim in enumerate(path.actions):
        leg = gait[k % len(gait)]
        state = path.states[k + 1]
        pos = select_foothold(prim, leg, state, cm, hm, stance, weights, lattice, gait)
        stance[leg] = pos
        plan.steps.append(FootholdStep(k, leg, pos, state, prim.id))
    return plan


def export_footholds_csv(plan: FootholdPlan, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["step", "leg", "x", "y", "z", "action"])
        for s in plan.steps:
            wr.writerow([s.index, s.leg, *(f"{v:.9g}" for v in s.position), s.action])
