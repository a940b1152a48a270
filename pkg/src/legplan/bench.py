"""Benchmark scenarios, metrics and the coupled vs decoupled comparison.

Terrains are generated on a regular grid with the robot walking along +x.
Every run is deterministic given (scenario, planner, seed); wall time is
measured but kept out of the CSV unless asked for, so repeated runs give
identical files.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

from . import coupled
from .body_planner import BodyState, Lattice, NoPathError, ara_star, default_primitives
from .com_spline import (
    ComPlanInfeasibleError,
    ComState,
    MarginTooLargeError,
    build_phase_plan,
    cop_slacks,
    generate_com_trajectory,
)
from .footholds import FootholdError, plan_foothold_sequence
from .geometry import convex_hull
from .preview import PreviewState
from .terrain import CostMap, GridSpec, HeightMap, build_costmap

TERRAIN_KINDS = ("flat", "gap", "stairs", "stepping_stones", "pallet", "ramp")
PLANNERS = ("coupled", "decoupled")

Rect = tuple[float, float, float, float]  # xmin, ymin, xmax, ymax


class ScenarioError(ValueError):
    pass


# ---------------------------------------------------------------- terrains

DEFAULT_PARAMS: dict[str, dict[str, float]] = {
    "flat": {},
    "gap": {"start": 0.6, "width": 0.25, "depth": 0.30},
    "stairs": {"start": 0.6, "rise": 0.14, "run": 0.30, "steps": 4},
    "stepping_stones": {"start": 0.5, "stone": 0.20, "spacing": 0.25, "elevation": 0.06, "rows": 6, "pit": 0.20},
    "pallet": {"start": 0.6, "length": 1.2, "height": 0.14, "slat": 0.10, "slot": 0.04},
    "ramp": {"start": 0.6, "angle": 10.0, "length": 1.0},
}


def terrain_params(kind: str, params: Mapping[str, float] | None = None) -> dict[str, float]:
    if kind not in DEFAULT_PARAMS:
        raise ScenarioError(f"unknown terrain kind {kind!r}; choose from {', '.join(TERRAIN_KINDS)}")
    out = dict(DEFAULT_PARAMS[kind])
    for k, v in (params or {}).items():
        if k not in out:
            raise ScenarioError(f"{kind} has no parameter {k!r}")
        out[k] = float(v)
    return out


def _profile(kind: str, p: Mapping[str, float], X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    if kind == "flat":
        return np.zeros_like(X)
    if kind == "gap":
        if p["width"] <= 0 or p["depth"] <= 0:
            raise ScenarioError("gap width and depth must be positive")
        inside = (X >= p["start"]) & (X < p["start"] + p["width"])
        return np.where(inside, -p["depth"], 0.0)
    if kind == "stairs":
        if p["rise"] <= 0 or p["run"] <= 0 or p["steps"] < 1:
            raise ScenarioError("stairs need positive rise, run and step count")
        k = np.floor((X - p["start"]) / p["run"]) + 1
        return p["rise"] * np.clip(k, 0, int(p["steps"]))
    if kind == "stepping_stones":
        if not 0 < p["stone"] <= p["spacing"] or p["rows"] < 1:
            raise ScenarioError("need 0 < stone <= spacing and at least one row")
        u = (X - p["start"]) / p["spacing"]
        v = Y / p["spacing"] + 0.5
        iu, iv = np.floor(u), np.floor(v)
        on = ((u - iu) * p["spacing"] < p["stone"]) & ((v - iv) * p["spacing"] < p["stone"])
        field_ = (u >= 0) & (iu < p["rows"])
        # three stone levels in a fixed pattern, neighbours differ by one elevation step
        level = np.mod(iu + 2 * iv, 3)
        z = np.where(on, p["elevation"] * level, -p["pit"])
        return np.where(field_, z, 0.0)
    if kind == "pallet":
        if p["length"] <= 0 or p["height"] <= 0 or p["slat"] <= 0 or p["slot"] < 0:
            raise ScenarioError("pallet dimensions must be positive")
        u = X - p["start"]
        on = (u >= 0) & (u < p["length"])
        pitch = p["slat"] + p["slot"]
        slat = np.mod(u, pitch) < p["slat"]
        return np.where(on, np.where(slat, p["height"], p["height"] - 0.10), 0.0)
    if kind == "ramp":
        if not 0 < p["angle"] < 45 or p["length"] <= 0:
            raise ScenarioError("ramp angle must be in (0, 45) degrees and length positive")
        u = np.clip(X - p["start"], 0.0, p["length"])
        return u * math.tan(math.radians(p["angle"]))
    raise ScenarioError(f"unknown terrain kind {kind!r}")


def generate_terrain(
    kind: str,
    params: Mapping[str, float] | None = None,
    length: float = 3.0,
    width: float = 1.6,
    origin: tuple[float, float] = (-0.8, -0.8),
    resolution: float = 0.02,
) -> HeightMap:
    """Deterministic heightmap of the given ``kind`` with the robot walking along +x."""
    if length <= 0 or width <= 0 or resolution <= 0:
        raise ScenarioError("terrain dimensions must be positive")
    p = terrain_params(kind, params)
    spec = GridSpec(origin, resolution, (int(round(length / resolution)), int(round(width / resolution))))
    X, Y = spec.centers()
    return HeightMap(spec, _profile(kind, p, X, Y))


def banned_regions(kind: str, params: Mapping[str, float] | None, spec: GridSpec) -> list[Rect]:
    """Rectangles no foot may touch: the gap floor, which looks flat to the costmap."""
    if kind != "gap":
        return []
    p = terrain_params(kind, params)
    x0, y0, x1, y1 = spec.extent
    return [(p["start"], y0, p["start"] + p["width"], y1)]


# ---------------------------------------------------------------- scenarios

@dataclass(frozen=True)
class Scenario:
    name: str
    kind: str
    params: Mapping[str, float] = field(default_factory=dict)
    start: tuple[float, float, float] = (0.0, 0.0, 0.0)
    goal: tuple[float, float, float] = (1.6, 0.0, 0.0)
    command: tuple[float, float] = (0.1, 0.0)
    overrides: Mapping[str, object] = field(default_factory=dict)
    length: float = 3.0
    width: float = 1.6
    origin: tuple[float, float] = (-0.8, -0.8)

    def heightmap(self) -> HeightMap:
        return generate_terrain(self.kind, self.params, self.length, self.width, self.origin)

    def costmap(self, hm: HeightMap | None = None) -> CostMap:
        hm = hm or self.heightmap()
        return build_costmap(hm, banned=banned_regions(self.kind, self.params, hm.spec))

    def banned(self) -> list[Rect]:
        return banned_regions(self.kind, self.params, self.heightmap().spec)


def default_scenarios() -> dict[str, Scenario]:
    out = {k: Scenario(k, k) for k in TERRAIN_KINDS}
    out["gap"] = Scenario("gap", "gap", goal=(1.5, 0.0, 0.0))
    return out


def get_scenario(name: str) -> Scenario:
    table = default_scenarios()
    if name not in table:
        raise ScenarioError(f"unknown scenario {name!r}; choose from {', '.join(table)}")
    return table[name]


# ---------------------------------------------------------------- metrics

@dataclass(frozen=True)
class RunMetrics:
    foothold_count: int
    avg_speed: float  # m/s
    elc_over_speed: float  # s/m
    violations: int
    wall_time: float  # s

    def finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.avg_speed, self.elc_over_speed, self.wall_time))


@dataclass
class RunRecord:
    scenario: str
    planner: str
    seed: int
    success: bool
    reason: str
    metrics: RunMetrics | None = None
    footholds: list[tuple[float, float]] = field(default_factory=list)
    com_path: list[tuple[float, float]] = field(default_factory=list)
    supports: list[list[tuple[float, float]]] = field(default_factory=list)


def elc(segments: Iterable[tuple[float, float]], gravity: float = 9.81) -> float:
    """Kinetic-energy estimate over m g D from (duration, chord length) pairs.

    Each segment contributes 0.5 (d/T)^2; the sum is divided by g times the
    total distance, so the result is dimensionless.
    """
    energy, dist = 0.0, 0.0
    for T, d in segments:
        if T > 0:
            energy += 0.5 * (d / T) ** 2
            dist += d
    return energy / (gravity * dist) if dist > 0 else math.inf


def _in_rects(xy, rects: Sequence[Rect]) -> bool:
    return any(r[0] <= xy[0] <= r[2] and r[1] <= xy[1] <= r[3] for r in rects)


@dataclass(frozen=True)
class BenchConfig:
    max_evals: int = 20_000
    max_plans: int = 60
    t_swing: float = 0.6
    margin: float = 0.1
    ara_budget: int = 200_000
    eps0: float = 3.0


def _planner_config(sc: Scenario, bc: BenchConfig, seed: int) -> coupled.PlannerConfig:
    cfg = coupled.PlannerConfig(seed=seed, max_evals=bc.max_evals, margin=bc.margin)
    try:
        return replace(cfg, **dict(sc.overrides))
    except TypeError as exc:
        raise ScenarioError(f"bad planner override in {sc.name}: {exc}") from exc


def run_coupled(sc: Scenario, seed: int, bc: BenchConfig = BenchConfig(),
                hm: HeightMap | None = None, cm: CostMap | None = None) -> RunRecord:
    """Receding-horizon walk until the CoM passes the goal x or the plan budget runs out."""
    hm = hm or sc.heightmap()
    cm = cm or sc.costmap(hm)
    banned = banned_regions(sc.kind, sc.params, hm.spec)
    cfg = _planner_config(sc, bc, seed)
    cmd = coupled.UserCommand(sc.command, sc.start[2])
    s0 = PreviewState.at_rest(sc.start[:2], cfg.offsets)
    t0 = time.perf_counter()
    state, offset = s0, 0
    warm = None
    per = cfg.executed_phases
    rec = RunRecord(sc.name, "coupled", seed, False, "")
    segments: list[tuple[float, float]] = []
    elapsed = 0.0
    violations = 0
    rec.com_path.append(tuple(map(float, s0.com)))
    try:
        for k in range(bc.max_plans):
            res = coupled.plan(state, cmd, cm, replace(cfg, seed=seed + k), phase_offset=offset, warm_start=warm)
            executed = [s for s in res.states[:-1] if s.phase < per]
            ex = res.states[: len(executed) + 1]
            for a, b in zip(ex[:-1], ex[1:]):
                ph = res.U.phases[a.phase]
                segments.append((ph.duration, math.dist(a.com, b.com)))
                elapsed += ph.duration
                if coupled.min_phase_slack([a, b], cfg.margin) < -1e-6:
                    violations += 1
                if ph.kind == "swing":
                    foot = tuple(float(v) for v in b.feet[ph.swing_leg][:2])
                    rec.footholds.append(foot)
                if a.support is not None:
                    rec.supports.append([tuple(map(float, q)) for q in a.support.polygon])
                rec.com_path.append(tuple(map(float, b.com)))
            state, consumed = coupled.receding_step(state, res.U, cfg, len(executed))
            warm = coupled.DecisionEncoding.build(cfg, offset).rotate(res.cma.x, consumed)
            offset = (offset + consumed) % len(cfg.cycle)
            if state.com[0] >= sc.goal[0]:
                break
    except coupled.PlannerError as exc:
        rec.reason = f"planner: {exc}"
    wall = time.perf_counter() - t0
    rec.metrics = _metrics(rec, segments, elapsed, violations, wall, sc.start)
    if not rec.reason:
        rec.success, rec.reason = _judge(rec, sc, banned, violations)
    return rec


def _metrics(rec, segments, elapsed, violations, wall, start) -> RunMetrics:
    dist = rec.com_path[-1][0] - start[0] if rec.com_path else 0.0
    speed = dist / elapsed if elapsed > 0 else 0.0
    e = elc(segments)
    ratio = e / speed if speed > 0 else math.inf
    return RunMetrics(len(rec.footholds), speed, ratio, violations, wall)


def _judge(rec: RunRecord, sc: Scenario, banned, violations) -> tuple[bool, str]:
    if violations:
        return False, f"{violations} support violations"
    bad = [f for f in rec.footholds if _in_rects(f, banned)]
    if bad:
        return False, f"{len(bad)} footholds in banned cells"
    if rec.com_path[-1][0] < sc.goal[0] - 0.05:
        return False, "did not reach the goal"
    return True, "ok"


def run_decoupled(sc: Scenario, seed: int, bc: BenchConfig = BenchConfig(),
                  hm: HeightMap | None = None, cm: CostMap | None = None) -> RunRecord:
    """ARA* body path, greedy footholds, then the CoM QP. ``seed`` only labels the run."""
    hm = hm or sc.heightmap()
    cm = cm or sc.costmap(hm)
    banned = banned_regions(sc.kind, sc.params, hm.spec)
    lat = Lattice()
    rec = RunRecord(sc.name, "decoupled", seed, False, "")
    t0 = time.perf_counter()
    try:
        path = ara_star(lat.state(*sc.start), lat.state(*sc.goal), default_primitives(), cm,
                        eps0=bc.eps0, budget=bc.ara_budget, lattice=lat)
        fp = plan_foothold_sequence(path, cm, hm, lattice=lat)
        pp = build_phase_plan(fp, fp.initial_stance, bc.t_swing, bc.margin)
        spline = generate_com_trajectory(pp, ComState(sc.start[:2]))
    except NoPathError as exc:
        rec.reason = f"no body path: {exc}"
    except FootholdError as exc:
        rec.reason = f"foothold: {exc}"
    except (MarginTooLargeError, ComPlanInfeasibleError) as exc:
        rec.reason = f"com: {exc}"
    wall = time.perf_counter() - t0
    if rec.reason:
        rec.metrics = RunMetrics(0, 0.0, math.inf, 0, wall)
        return rec
    rec.footholds = [tuple(map(float, s.position[:2])) for s in fp.steps]
    seg = []
    t = 0.0
    prev = np.asarray(spline.evaluate(0.0)[0])
    for T in spline.durations:
        t += float(T)
        cur = np.asarray(spline.evaluate(t)[0])
        seg.append((float(T), float(np.linalg.norm(cur - prev))))
        prev = cur
    rec.com_path = [tuple(map(float, spline.evaluate(float(b))[0])) for b in spline.boundaries]
    rec.supports = [convex_hull(list(ph.feet.values())) for ph in pp.phases if ph.duration > 0]
    slack = cop_slacks(spline, pp)
    violations = int(np.sum(slack < -1e-6))
    rec.metrics = _metrics(rec, seg, spline.duration, violations, wall, sc.start)
    rec.success, rec.reason = _judge(rec, sc, banned, violations)
    return rec


def run_comparison(sc: Scenario, planners: Sequence[str] = PLANNERS, seeds: Sequence[int] = (0,),
                   bc: BenchConfig = BenchConfig(), executor=None) -> list[RunRecord]:
    """Every (planner, seed) run of ``sc``; runs are independent, so ``executor`` may map them."""
    for p in planners:
        if p not in PLANNERS:
            raise ScenarioError(f"unknown planner {p!r}")
    jobs = [(sc, p, int(s), bc) for p in planners for s in seeds]
    mapper = executor.map if executor is not None else map
    return list(mapper(_run_job, jobs))


def _run_job(job) -> RunRecord:
    sc, planner, seed, bc = job
    fn = run_coupled if planner == "coupled" else run_decoupled
    return fn(sc, seed, bc)


CSV_FIELDS = ("scenario", "planner", "seed", "success", "reason", "foothold_count",
              "avg_speed", "elc_over_speed", "violations")


def write_csv(records: Sequence[RunRecord], out, timing: bool = False) -> None:
    """CSV rows in input order; ``out`` is a path or a text stream."""
    if isinstance(out, (str, Path)):
        with open(out, "w", newline="") as fh:
            write_csv(records, fh, timing)
        return
    wr = csv.writer(out, lineterminator="\n")
    wr.writerow(CSV_FIELDS + (("wall_time",) if timing else ()))
    for r in records:
        m = r.metrics or RunMetrics(0, 0.0, math.inf, 0, 0.0)
        row = [r.scenario, r.planner, r.seed, int(r.success), r.reason, m.foothold_count,
               repr(m.avg_speed), repr(m.elc_over_speed), m.violations]
        if timing:
            row.append(f"{m.wall_time:.3f}")
        wr.writerow(row)


def csv_text(records: Sequence[RunRecord], timing: bool = False) -> str:
    buf = io.StringIO()
    write_csv(records, buf, timing)
    return buf.getvalue()


# ---------------------------------------------------------------- rendering

def _heat(c: float) -> str:
    """Blue for the cheapest cells through to red for the most expensive."""
    c = min(max(c, 0.0), 1.0)
    return f"rgb({int(round(255 * c))},0,{int(round(255 * (1 - c)))})"


def render_svg(cm: CostMap, records: Sequence[RunRecord] = (), path: str | Path | None = None,
               scale: float = 200.0) -> str:
    """SVG of the costmap with footholds, CoM paths and support polygons; written to ``path`` if given."""
    spec = cm.spec
    x0, y0, x1, y1 = spec.extent
    W, H = (x1 - x0) * scale, (y1 - y0) * scale

    def px(x, y):
        return (x - x0) * scale, (y1 - y) * scale

    res = spec.resolution * scale
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W:.1f}" height="{H:.1f}" '
             f'viewBox="0 0 {W:.1f} {H:.1f}">', '<g id="costmap">']
    X, Y = spec.centers()
    for i in range(spec.nx):
        for j in range(spec.ny):
            u, v = px(X[i, j] - 0.5 * spec.resolution, Y[i, j] + 0.5 * spec.resolution)
            parts.append(f'<rect x="{u:.2f}" y="{v:.2f}" width="{res:.2f}" height="{res:.2f}" '
                         f'fill="{_heat(float(cm.total[i, j]))}"/>')
    parts.append("</g>")
    colours = {"coupled": "white", "decoupled": "yellow"}
    for r in records:
        col = colours.get(r.planner, "white")
        parts.append(f'<g class="run" data-planner="{escape(r.planner)}" data-seed="{r.seed}">')
        for poly in r.supports:
            pts = " ".join("{:.2f},{:.2f}".format(*px(*q)) for q in poly)
            parts.append(f'<polygon class="support" points="{pts}" fill="none" stroke="{col}" '
                         'stroke-opacity="0.3" stroke-width="1"/>')
        if len(r.com_path) > 1:
            pts = " ".join("{:.2f},{:.2f}".format(*px(*q)) for q in r.com_path)
            parts.append(f'<polyline class="com" points="{pts}" fill="none" stroke="{col}" stroke-width="2"/>')
        for f in r.footholds:
            u, v = px(*f)
            parts.append(f'<circle class="foothold" cx="{u:.2f}" cy="{v:.2f}" r="4" fill="{col}" stroke="black"/>')
        parts.append("</g>")
    parts.append("</svg>")
    text = "\n".join(parts) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text
