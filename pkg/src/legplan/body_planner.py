"""Lattice body-state search for the decoupled planner.

States are integer lattice coordinates ``(ix, iy, ih)`` with world pose
``(ix * res, iy * res, ih * 2 pi / headings)``. Edges apply body-frame motion
primitives; their cost mixes terrain, action, shin-collision and body
orientation terms. ARA* searches the graph with a decreasing inflation.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .attitude import DegeneratePlaneError, fit_support_plane
from .preview import LEGS, nominal_offsets
from .terrain import CostMap

Rect = tuple[float, float, float, float]  # xmin, xmax, ymin, ymax in the body frame


class NoPathError(RuntimeError):
    def __init__(self, message: str, best_eps: float | None = None):
        super().__init__(message)
        self.best_eps = best_eps


@dataclass(frozen=True)
class Lattice:
    resolution: float = 0.05
    headings: int = 16

    @property
    def heading_step(self) -> float:
        return 2 * math.pi / self.headings

    def pose(self, s: "BodyState") -> tuple[float, float, float]:
        return s.ix * self.resolution, s.iy * self.resolution, s.ih * self.heading_step

    def state(self, x: float, y: float, theta: float) -> "BodyState":
        return BodyState(
            int(round(x / self.resolution)),
            int(round(y / self.resolution)),
            int(round(theta / self.heading_step)) % self.headings,
        )


@dataclass(frozen=True, order=True)
class BodyState:
    ix: int
    iy: int
    ih: int


@dataclass(frozen=True)
class MotionPrimitive:
    id: str
    dx: float
    dy: float
    dtheta: float
    action_cost: float
    regions: Mapping[str, Rect]  # per-leg footstep rectangle relative to the body at the successor

    def __post_init__(self):
        for leg, (x0, x1, y0, y1) in self.regions.items():
            if not (x0 <= x1 and y0 <= y1):
                raise ValueError(f"empty region for {leg} in primitive {self.id}")
        if self.action_cost < 0:
            raise ValueError("action cost must be non-negative")

    @property
    def translates(self) -> bool:
        return self.dx != 0 or self.dy != 0


def _default_regions(dx: float, dy: float, half=(0.06, 0.05)) -> dict[str, Rect]:
    out = {}
    for leg, (ox, oy) in nominal_offsets().items():
        cx, cy = ox + 0.5 * dx, oy + 0.5 * dy
        out[leg] = (cx - half[0], cx + half[0], cy - half[1], cy + half[1])
    return out


def default_primitives() -> list[MotionPrimitive]:
    turn = 2 * math.pi / 16
    spec = [
        ("forward", 0.10, 0.0, 0.0, 0.0),
        ("forward_left", 0.10, 0.05, 0.0, 0.2),
        ("forward_right", 0.10, -0.05, 0.0, 0.2),
        ("left", 0.0, 0.05, 0.0, 0.5),
        ("right", 0.0, -0.05, 0.0, 0.5),
        ("turn_left", 0.0, 0.0, turn, 0.3),
        ("turn_right", 0.0, 0.0, -turn, 0.3),
    ]
    return [MotionPrimitive(i, dx, dy, dt, ca, _default_regions(dx, dy)) for i, dx, dy, dt, ca in spec]


def save_primitives(prims: Iterable[MotionPrimitive], path: str | Path) -> None:
    """Plain-text table: ``id dx dy dtheta c_a LEG:xmin,xmax,ymin,ymax ...``."""
    lines = ["# id dx dy dtheta c_a regions"]
    for p in prims:
        regs = " ".join(f"{leg}:" + ",".join(repr(v) for v in rect) for leg, rect in p.regions.items())
        lines.append(f"{p.id} {p.dx!r} {p.dy!r} {p.dtheta!r} {p.action_cost!r} {regs}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_primitives(path: str | Path) -> list[MotionPrimitive]:
    out = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if len(tok) < 6:
            raise ValueError(f"malformed primitive line: {raw!r}")
        regions = {}
        for item in tok[5:]:
            leg, vals = item.split(":")
            rect = tuple(float(v) for v in vals.split(","))
            if len(rect) != 4:
                raise ValueError(f"region needs 4 numbers: {item!r}")
            regions[leg] = rect
        out.append(MotionPrimitive(tok[0], float(tok[1]), float(tok[2]), float(tok[3]), float(tok[4]), regions))
    return out


@dataclass(frozen=True)
class BodyCostWeights:
    terrain: float = 1.0
    action: float = 0.3
    collision: float = 1.0
    orientation: float = 0.5

    def __post_init__(self):
        if min(self.terrain, self.action, self.collision, self.orientation) < 0:
            raise ValueError("body cost weights must be non-negative")


def successor(s: BodyState, prim: MotionPrimitive, lattice: Lattice) -> BodyState:
    x, y, th = lattice.pose(s)
    c, si = math.cos(th), math.sin(th)
    dh = int(round(prim.dtheta / lattice.heading_step))
    return BodyState(
        s.ix + int(round((c * prim.dx - si * prim.dy) / lattice.resolution)),
        s.iy + int(round((si * prim.dx + c * prim.dy) / lattice.resolution)),
        (s.ih + dh) % lattice.headings,
    )


def region_cells(cm: CostMap, pose: tuple[float, float, float], rect: Rect) -> tuple[np.ndarray, np.ndarray]:
    """Indices (i, j) of costmap cells whose centres lie in a body-frame rectangle."""
    x, y, th = pose
    c, s = math.cos(th), math.sin(th)
    x0, x1, y0, y1 = rect
    corners = np.array([[x0, y0], [x0, y1], [x1, y0], [x1, y1]])
    wx = x + c * corners[:, 0] - s * corners[:, 1]
    wy = y + s * corners[:, 0] + c * corners[:, 1]
    spec = cm.spec
    res = spec.resolution
    ox, oy = spec.origin
    i0 = max(0, int(math.floor((wx.min() - ox) / res - 0.5)))
    i1 = min(spec.nx - 1, int(math.ceil((wx.max() - ox) / res - 0.5)))
    j0 = max(0, int(math.floor((wy.min() - oy) / res - 0.5)))
    j1 = min(spec.ny - 1, int(math.ceil((wy.max() - oy) / res - 0.5)))
    if i0 > i1 or j0 > j1:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    I, J = np.meshgrid(np.arange(i0, i1 + 1), np.arange(j0, j1 + 1), indexing="ij")
    cx = ox + (I + 0.5) * res - x
    cy = oy + (J + 0.5) * res - y
    bx = c * cx + s * cy
    by = -s * cx + c * cy
    eps = 1e-9
    inside = (bx >= x0 - eps) & (bx <= x1 + eps) & (by >= y0 - eps) & (by <= y1 + eps)
    return I[inside], J[inside]


@dataclass(frozen=True)
class BodyCostTerms:
    terrain: float
    action: float
    collision: float
    orientation: float

    def total(self, w: BodyCostWeights) -> float:
        return (w.terrain * self.terrain + w.action * self.action
                + w.collision * self.collision + w.orientation * self.orientation)


SHIN_BAND = 0.10


def body_cost_terms(
    s_next: BodyState,
    prim: MotionPrimitive,
    cm: CostMap,
    lattice: Lattice,
    n_best: int = 5,
    shin_band: float = SHIN_BAND,
) -> BodyCostTerms | None:
    """Individual cost terms at the successor state; None when a region is off the map."""
    pose = lattice.pose(s_next)
    heights = cm.heights
    c_t, c_pc = 0.0, 0.0
    feet = []
    for leg in LEGS:
        rect = prim.regions[leg]
        I, J = region_cells(cm, pose, rect)
        if I.size == 0:
            return None
        costs = np.sort(cm.total[I, J])
        c_t += float(np.mean(costs[:n_best]))
        if heights is None:
            continue
        zr = heights[I, J]
        zr = zr[np.isfinite(zr)]
        if zr.size == 0:
            continue
        ref = float(np.median(zr))
        bI, bJ = region_cells(cm, pose, (rect[0] - shin_band, rect[0], rect[2], rect[3]))
        if bI.size:
            zb = heights[bI, bJ]
            zb = zb[np.isfinite(zb)]
            if zb.size:
                c_pc += float(np.sum(np.maximum(zb - ref, 0.0))) / zb.size
        cx, cy = 0.5 * (rect[0] + rect[1]), 0.5 * (rect[2] + rect[3])
        th = pose[2]
        feet.append((pose[0] + math.cos(th) * cx - math.sin(th) * cy,
                     pose[1] + math.sin(th) * cx + math.cos(th) * cy, ref))
    c_po = 0.0
    if len(feet) >= 3:
        try:
            roll, pitch = fit_support_plane(feet, pose[2])
            c_po = abs(roll) + abs(pitch)
        except DegeneratePlaneError:
            c_po = 0.0
    return BodyCostTerms(c_t / len(LEGS), prim.action_cost, c_pc / len(LEGS), c_po)


def body_cost(s, s_next, prim, cm, weights: BodyCostWeights, lattice: Lattice = Lattice(), n_best: int = 5) -> float:
    """Weighted edge cost; +inf when a footstep region leaves the map."""
    if successor(s, prim, lattice) != s_next:
        raise ValueError("s_next is not reachable from s with this primitive")
    terms = body_cost_terms(s_next, prim, cm, lattice, n_best)
    return math.inf if terms is None else terms.total(weights)


class EdgeCost:
    """Memoised edge costs. The cost depends only on (successor, primitive)."""

    def __init__(self, cm: CostMap, weights: BodyCostWeights, lattice: Lattice = Lattice(), n_best: int = 5):
        self.cm, self.weights, self.lattice, self.n_best = cm, weights, lattice, n_best
        self._cache: dict = {}

    def __call__(self, s_next: BodyState, prim: MotionPrimitive) -> float:
        key = (s_next, prim.id)
        v = self._cache.get(key)
        if v is None:
            terms = body_cost_terms(s_next, prim, self.cm, self.lattice, self.n_best)
            v = math.inf if terms is None else terms.total(self.weights)
            self._cache[key] = v
        return v


def expand(
    s: BodyState,
    primitives: Sequence[MotionPrimitive],
    edge_cost: Callable[[BodyState, MotionPrimitive], float],
    lattice: Lattice = Lattice(),
) -> list[tuple[BodyState, MotionPrimitive, float]]:
    """Finite-cost successors of ``s``, one per applicable primitive."""
    out = []
    for prim in primitives:
        nxt = successor(s, prim, lattice)
        c = edge_cost(nxt, prim)
        if math.isfinite(c):
            out.append((nxt, prim, c))
    return out


def heuristic(s_xy: Sequence[float], goal_xy: Sequence[float], per_step_bound: float,
              step_length: float, tolerance: float = 0.0) -> float:
    """Lower bound on cost-to-go: per-step bound times the minimum step count."""
    if not step_length > 0:
        raise ValueError("step_length must be positive")
    dist = math.hypot(goal_xy[0] - s_xy[0], goal_xy[1] - s_xy[1]) - tolerance
    if dist <= 1e-12:
        return 0.0
    return per_step_bound * math.ceil(dist / step_length - 1e-12)


def heuristic_parameters(
    primitives: Sequence[MotionPrimitive], cm: CostMap, weights: BodyCostWeights, lattice: Lattice = Lattice()
) -> tuple[float, float]:
    """``(per_step_bound, step_length)`` keeping :func:`heuristic` admissible and consistent.

    Every translating edge costs at least the cheapest translating action plus
    the terrain weight times the smallest map cost, and moves at most the
    longest quantised primitive displacement over all headings.
    """
    moving = [p for p in primitives if p.translates]
    if not moving:
        raise ValueError("no translating primitive")
    origin = BodyState(0, 0, 0)
    step = 0.0
    for p in moving:
        for h in range(lattice.headings):
            n = successor(BodyState(0, 0, h), p, lattice)
            step = max(step, math.hypot(n.ix - origin.ix, n.iy - origin.iy) * lattice.resolution)
    bound = min(weights.action * p.action_cost for p in moving) + weights.terrain * float(np.min(cm.total))
    return max(bound, 0.0), step


def in_goal(s: BodyState, goal: BodyState, lattice: Lattice, pos_tol: int = 1, heading_tol: int = 1) -> bool:
    dh = abs(s.ih - goal.ih) % lattice.headings
    dh = min(dh, lattice.headings - dh)
    return abs(s.ix - goal.ix) <= pos_tol and abs(s.iy - goal.iy) <= pos_tol and dh <= heading_tol


@dataclass
class BodyPath:
    states: list[BodyState]
    actions: list[MotionPrimitive]
    cost: float
    eps: float
    history: list[tuple[float, float]] = field(default_factory=list)  # (eps, cost) per solution
    expansions: int = 0


def ara_star(
    start: BodyState,
    goal: BodyState,
    primitives: Sequence[MotionPrimitive],
    cm: CostMap,
    weights: BodyCostWeights = BodyCostWeights(),
    eps0: float = 3.0,
    eps_schedule: Sequence[float] | None = None,
    budget: int = 200_000,
    lattice: Lattice = Lattice(),
    n_best: int = 5,
    edge_cost: Callable | None = None,
    pos_tol: int = 1,
    heading_tol: int = 1,
) -> BodyPath:
    """Anytime repairing A* from ``start`` to the tolerance region around ``goal``.

    ``eps_schedule`` lists the inflation factors after ``eps0`` (default: steps of
    0.5 down to 1). ``budget`` caps the total number of expansions. Returns the
    last completed solution; raises :class:`NoPathError` when none is found.
    """
    if eps0 < 1:
        raise ValueError("eps0 must be >= 1")
    if eps_schedule is None:
        eps_schedule, e = [], eps0
        while e > 1:
            e = max(1.0, e - 0.5)
            eps_schedule.append(e)
    schedule = [eps0] + [e for e in eps_schedule if e < eps0]
    cost_fn = edge_cost or EdgeCost(cm, weights, lattice, n_best)
    bound, step_len = heuristic_parameters(primitives, cm, weights, lattice)
    gxy = (goal.ix * lattice.resolution, goal.iy * lattice.resolution)
    tol = math.sqrt(2) * pos_tol * lattice.resolution

    hcache: dict[BodyState, float] = {}

    def h(s):
        v = hcache.get(s)
        if v is None:
            v = heuristic((s.ix * lattice.resolution, s.iy * lattice.resolution), gxy, bound, step_len, tol)
            hcache[s] = v
        return v

    g: dict[BodyState, float] = {start: 0.0}
    parent: dict[BodyState, tuple[BodyState, MotionPrimitive]] = {}
    counter = itertools.count()
    open_heap: list = []
    open_best: dict[BodyState, float] = {}
    incons: dict[BodyState, None] = {}
    best_goal: BodyState | None = start if in_goal(start, goal, lattice, pos_tol, heading_tol) else None
    history: list[tuple[float, float]] = []
    solution: BodyPath | None = None
    expansions = 0

    def push(s, eps):
        key = g[s] + eps * h(s)
        open_best[s] = g[s]
        heapq.heappush(open_heap, (key, g[s], next(counter), s))

    def goal_g():
        return g[best_goal] if best_goal is not None else math.inf

    push(start, schedule[0])
    for eps in schedule:
        if eps != schedule[0]:
            # move INCONS into OPEN and rebuild keys with the new inflation
            pending = list(dict.fromkeys(list(open_best) + list(incons)))
            open_heap.clear()
            open_best.clear()
            incons.clear()
            for s in pending:
                push(s, eps)
        closed: set[BodyState] = set()
        exhausted = False
        while open_heap:
            key, gs, _, s = open_heap[0]
            if open_best.get(s) != gs or gs != g[s]:
                heapq.heappop(open_heap)
                continue
            if key >= goal_g():
                break
            if expansions >= budget:
                exhausted = True
                break
            heapq.heappop(open_heap)
            del open_best[s]
            closed.add(s)
            expansions += 1
            for nxt, prim, c in expand(s, primitives, cost_fn, lattice):
                ng = gs + c
                if ng < g.get(nxt, math.inf):
                    g[nxt] = ng
                    parent[nxt] = (s, prim)
                    if in_goal(nxt, goal, lattice, pos_tol, heading_tol) and ng < goal_g():
                        best_goal = nxt
                    if nxt in closed:
                        incons[nxt] = None
                    else:
                        push(nxt, eps)
        if exhausted or best_goal is None:
            break
        states, actions = [best_goal], []
        while states[-1] != start:
            p, prim = parent[states[-1]]
            states.append(p)
            actions.append(prim)
        states.reverse()
        actions.reverse()
        history.append((eps, goal_g()))
        solution = BodyPath(states, actions, goal_g(), eps, list(history), expansions)
    if solution is None:
        raise NoPathError("goal not reachable within the expansion budget" if expansions >= budget
                          else "goal not reachable", None)
    solution.expansions = expansions
    return solution
