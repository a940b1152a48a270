"""Coupled motion and foothold optimisation over the cart-table preview model.

A locomotion cycle is a fixed sequence of stance and swing phases. The
decision vector holds each phase's duration and COP shift plus, for swing
phases, the foot shift. CMA-ES minimises a weighted sum of task costs
(velocity tracking, energy, terrain) and soft constraints (COP stability,
CoM/COP coupling) evaluated on the closed-form rollout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage

from . import cmaes
from .attitude import AttitudeSpline, DegeneratePlaneError, InertiaModel, fit_support_plane, max_angular_acceleration, plan_attitude
from .geometry import slacks
from .preview import (
    LEGS,
    CartTableParams,
    ControlSequence,
    PreviewPhase,
    PreviewState,
    nominal_offsets,
    rollout,
)
from .terrain import CostMap, OutOfBoundsError

DEFAULT_CYCLE = ("stance", "LH", "LF", "stance", "RH", "RF")
INFEASIBLE = 1e9


class PlannerError(RuntimeError):
    pass


@dataclass(frozen=True)
class PlannerWeights:
    velocity: float = 300.0
    terrain: float = 30.0
    energy: float = 10.0
    stability: float = 1000.0
    coupling: float = 500.0

    def __post_init__(self):
        if min(self.velocity, self.terrain, self.energy, self.stability, self.coupling) < 0:
            raise ValueError("planner weights must be non-negative")


@dataclass(frozen=True)
class UserCommand:
    velocity: tuple[float, float] = (0.0, 0.0)
    heading: float = 0.0


@dataclass(frozen=True)
class PlannerConfig:
    weights: PlannerWeights = PlannerWeights()
    cycle: tuple[str, ...] = DEFAULT_CYCLE
    horizon: int = 1
    t_min: float = 0.05
    t_max: float = 1.4
    t_init: float = 0.6
    cop_bound: float = 0.3
    foot_bound: tuple[float, float] = (0.17, 0.14)
    margin: float = 0.1
    stability_buffer: float = 0.02
    kappa: float = 100.0
    terrain_threshold: float = 0.8
    height: float = 0.58
    gravity: float = 9.81
    mass: float = 85.0
    sigma0: float = 0.2
    warm_sigma: float = 0.1  # initial step size when starting from the previous plan
    execute: int = 0  # phases run per receding plan; 0 means half a cycle
    max_evals: int = 20_000
    seed: int = 0
    popsize: int = 0  # 0 keeps the CMA-ES default
    active_cma: bool = True
    terminal_capture: bool = True  # keep the final divergent component inside the support
    feasibility_retries: int = 2  # extra optimiser runs when the best plan leaves the support
    elc_min_distance: float = 1e-6
    stance_length: float = 0.75
    stance_width: float = 0.5

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not 0 < self.t_min < self.t_max:
            raise ValueError("need 0 < t_min < t_max")
        for ph in self.cycle:
            if ph != "stance" and ph not in LEGS:
                raise ValueError(f"unknown cycle entry {ph!r}")
        hl, hw = 0.5 * self.stance_length, 0.5 * self.stance_width
        if not 0 <= self.execute <= len(self.cycle) * self.horizon:
            raise ValueError("execute must lie in [0, phases per plan]")
        if self.foot_bound[0] >= hl or self.foot_bound[1] >= hw:
            raise ValueError("foot-shift bounds would let a foot cross the stance centre")

    @property
    def executed_phases(self) -> int:
        return self.execute or max(1, len(self.cycle) // 2)

    @property
    def offsets(self) -> dict[str, tuple[float, float]]:
        return nominal_offsets(self.stance_length, self.stance_width)

    @property
    def params(self) -> CartTableParams:
        return CartTableParams(self.height, self.gravity)


def _parse_value(text: str, current):
    if isinstance(current, bool):
        return text.lower() in ("1", "true", "yes", "on")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, tuple):
        items = [t.strip() for t in text.split(",") if t.strip()]
        if current and isinstance(current[0], (int, float)):
            return tuple(float(t) for t in items)
        return tuple(items)
    return text


def load_config(path: str | Path, base: PlannerConfig | None = None) -> PlannerConfig:
    """Flat ``key = value`` file; weights use ``weight.<name>``; ``#`` starts a comment."""
    cfg = base or PlannerConfig()
    top = {f.name for f in fields(PlannerConfig)} - {"weights"}
    wnames = {f.name for f in fields(PlannerWeights)}
    updates, wupdates = {}, {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, val = (t.strip() for t in line.split("=", 1))
        if key.startswith("weight."):
            name = key[len("weight."):]
            if name not in wnames:
                raise ValueError(f"line {lineno}: unknown weight {name!r}")
            wupdates[name] = float(val)
        elif key in top:
            updates[key] = _parse_value(val, getattr(cfg, key))
        else:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
    if wupdates:
        updates["weights"] = replace(cfg.weights, **wupdates)
    return replace(cfg, **updates)


# ---------------------------------------------------------------- encoding


@dataclass(frozen=True)
class DecisionEncoding:
    kinds: tuple[str, ...]  # per phase: "stance" or a swing leg
    lower: np.ndarray
    upper: np.ndarray

    @property
    def dimension(self) -> int:
        return self.lower.size

    @classmethod
    def build(cls, cfg: PlannerConfig, offset: int = 0) -> "DecisionEncoding":
        n = len(cfg.cycle)
        kinds = tuple(cfg.cycle[(offset + k) % n] for k in range(n * cfg.horizon))
        lo, hi = [], []
        c, (fx, fy) = cfg.cop_bound, cfg.foot_bound
        for kind in kinds:
            lo += [cfg.t_min, -c, -c]
            hi += [cfg.t_max, c, c]
            if kind != "stance":
                lo += [-fx, -fy]
                hi += [fx, fy]
        return cls(kinds, np.array(lo), np.array(hi))

    def decode(self, v: np.ndarray) -> ControlSequence:
        """Physical decision vector to a control sequence."""
        phases, k = [], 0
        for kind in self.kinds:
            T, px, py = v[k], v[k + 1], v[k + 2]
            k += 3
            if kind == "stance":
                phases.append(PreviewPhase("stance", float(T), (float(px), float(py))))
            else:
                phases.append(PreviewPhase("swing", float(T), (float(px), float(py)),
                                           (float(v[k]), float(v[k + 1])), kind))
                k += 2
        return ControlSequence(tuple(phases))

    def rotate(self, u: np.ndarray, n: int) -> np.ndarray:
        """Move the variables of the first ``n`` phases to the back (cyclic warm start)."""
        k = sum(3 if kind == "stance" else 5 for kind in self.kinds[:n])
        return np.roll(np.asarray(u, dtype=float), -k)

    def encode(self, U: ControlSequence) -> np.ndarray:
        out = []
        for ph in U.phases:
            out += [ph.duration, *ph.cop_shift]
            if ph.kind == "swing":
                out += list(ph.foot_shift)
        return np.array(out, dtype=float)

    def to_unit(self, v: np.ndarray) -> np.ndarray:
        return (np.asarray(v) - self.lower) / (self.upper - self.lower)

    def from_unit(self, u: np.ndarray) -> np.ndarray:
        return self.lower + np.asarray(u) * (self.upper - self.lower)

    def initial(self, cfg: PlannerConfig, cmd: UserCommand) -> np.ndarray:
        v = []
        for kind in self.kinds:
            T = cfg.t_init
            v += [T, *np.clip(np.asarray(cmd.velocity) * T, -cfg.cop_bound, cfg.cop_bound)]
            if kind != "stance":
                v += [0.0, 0.0]
        return np.clip(np.array(v), self.lower, self.upper)


# ---------------------------------------------------------------- cost terms


def g_velocity(states: Sequence[PreviewState], U: ControlSequence, cmd: UserCommand) -> float:
    total = U.total_duration
    if not total > 0:
        raise ValueError("all phase durations are zero")
    x0, x1 = np.asarray(states[0].com), np.asarray(states[-1].com)
    err = np.asarray(cmd.velocity, dtype=float) - (x1 - x0) / total
    return float(err @ err)


def g_elc(states: Sequence[PreviewState], U: ControlSequence, gravity: float = 9.81, min_distance: float = 1e-6) -> float:
    """Sum over phases of kinetic energy over (m g d), with mean speed = chord / T."""
    out = 0.0
    for a, b in zip(states[:-1], states[1:]):
        T = U.phases[a.phase].duration
        d = math.dist(a.com, b.com)
        if d < min_distance:
            continue
        v = d / T
        out += 0.5 * v * v / (gravity * d)
    return out


def escape_distance(cm: CostMap, threshold: float = 0.8) -> np.ndarray:
    """Distance in metres from each cell to the nearest cell with cost at most ``threshold``.

    Zero on acceptable cells. Costmaps saturate at 1 inside obstacles, so this
    field is what tells the optimiser which way is out.
    """
    bad = ~(cm.total <= threshold)
    if bad.all():
        return np.zeros(cm.total.shape)
    return ndimage.distance_transform_edt(bad) * cm.spec.resolution


def g_terrain(footholds: Sequence[Sequence[float]], cm: CostMap, kappa: float = 100.0, threshold: float = 0.8,
              escape: np.ndarray | None = None) -> float:
    """Sum of foothold costs, plus ``kappa`` times the squared excess over
    ``threshold`` and, given an ``escape`` field, ``kappa`` times the distance
    to the nearest acceptable cell."""
    out = 0.0
    for xy in footholds:
        c = cm.cost_at(xy, default=1.0)
        out += c
        if c > threshold:
            out += kappa * (c - threshold) ** 2
            if escape is not None:
                try:
                    i, j = cm.spec.cell_of(xy)
                except OutOfBoundsError:
                    continue
                out += kappa * float(escape[i, j])
    return out


def g_stability(states: Sequence[PreviewState], r: float | None = None, omega: float | None = None) -> float:
    """Squared line violations of each phase's initial and terminal COP.

    Uses the lines stored in each state's support region (built with the
    rollout margin) unless ``r`` re-shrinks them. With ``omega`` the final
    divergent component ``x + xd / omega`` must also lie in the final
    four-foot region, so the next plan starts from a capturable state.
    """
    out = 0.0
    for a, b in zip(states[:-1], states[1:]):
        lines = a.support.lines if a.support is not None else None
        if lines is None:
            return math.inf
        if r is not None:
            lines = lines.copy()
            lines[:, 2] += a.support.margin - r
        for p in (a.cop, b.cop):
            out += float(np.sum(np.minimum(slacks(lines, p), 0.0) ** 2))
    if omega is not None:
        end = states[-1]
        lines = end.support.lines if end.support is not None else None
        if lines is None:
            return math.inf
        if r is not None:
            lines = lines.copy()
            lines[:, 2] += end.support.margin - r
        dcm = (end.com[0] + end.com_vel[0] / omega, end.com[1] + end.com_vel[1] / omega)
        out += float(np.sum(np.minimum(slacks(lines, dcm), 0.0) ** 2))
    return out


def coupling_residual(com, cop, h: float) -> float:
    dx, dy = com[0] - cop[0], com[1] - cop[1]
    return math.sqrt(dx * dx + dy * dy + h * h) - h


def g_coupling(states: Sequence[PreviewState], h: float) -> float:
    out = 0.0
    for a, b in zip(states[:-1], states[1:]):
        out += coupling_residual(a.com, a.cop, h) ** 2 + coupling_residual(b.com, b.cop, h) ** 2
    return out


def planned_footholds(states: Sequence[PreviewState], U: ControlSequence) -> list[tuple[str, tuple[float, float]]]:
    """(leg, landing xy) for every executed swing phase."""
    return [(U.phases[s.phase].swing_leg, s.feet[U.phases[s.phase].swing_leg])
            for s in states[:-1] if U.phases[s.phase].kind == "swing"]


def min_phase_slack(states: Sequence[PreviewState], r: float) -> float:
    """Smallest COP line slack at phase endpoints with the regions shrunk by ``r``."""
    worst = math.inf
    for a, b in zip(states[:-1], states[1:]):
        if a.support is None or a.support.lines is None:
            return -math.inf
        lines = a.support.lines.copy()
        lines[:, 2] += a.support.margin - r
        for p in (a.cop, b.cop):
            worst = min(worst, float(slacks(lines, p).min()))
    return worst


@dataclass
class CostBreakdown:
    velocity: float
    energy: float
    terrain: float
    stability: float
    coupling: float

    def total(self, w: PlannerWeights) -> float:
        return (w.velocity * self.velocity + w.energy * self.energy + w.terrain * self.terrain
                + w.stability * self.stability + w.coupling * self.coupling)


class CoupledObjective:
    """Pure objective over the normalised decision vector; safe to call concurrently."""

    def __init__(self, s0: PreviewState, cmd: UserCommand, cm: CostMap, cfg: PlannerConfig, enc: DecisionEncoding):
        self.s0, self.cmd, self.cm, self.cfg, self.enc = s0, cmd, cm, cfg, enc
        self.escape = escape_distance(cm, cfg.terrain_threshold)

    def breakdown(self, U: ControlSequence):
        cfg = self.cfg
        states = rollout(self.s0, U, cfg.margin + cfg.stability_buffer, cfg.params, cfg.offsets, strict=False)
        if len(states) < 2:
            return None, states
        if any(s.support.lines is None for s in states[:-1]):
            return None, states
        feet = [xy for _, xy in planned_footholds(states, U)]
        cb = CostBreakdown(
            g_velocity(states, U, self.cmd),
            g_elc(states, U, cfg.gravity, cfg.elc_min_distance),
            g_terrain(feet, self.cm, cfg.kappa, cfg.terrain_threshold, self.escape),
            g_stability(states, omega=cfg.params.omega if cfg.terminal_capture else None),
            g_coupling(states, cfg.height),
        )
        return cb, states

    def __call__(self, u: np.ndarray) -> float:
        U = self.enc.decode(self.enc.from_unit(u))
        cb, _ = self.breakdown(U)
        if cb is None:
            return INFEASIBLE
        return cb.total(self.cfg.weights)


@dataclass
class PlanResult:
    U: ControlSequence
    states: list[PreviewState]  # rollout with regions shrunk by the margin r
    attitude: AttitudeSpline | None
    costs: CostBreakdown
    total: float
    footholds: list[tuple[str, tuple[float, float]]]
    min_slack: float
    cma: cmaes.CmaResult = field(repr=False, default=None)

    @property
    def feasible(self) -> bool:
        return self.min_slack >= -1e-6


def _terrain_height(cm: CostMap, xy) -> float:
    h = cm.heights
    if h is None:
        return 0.0
    res = cm.spec.resolution
    i = math.floor((xy[0] - cm.spec.origin[0]) / res)
    j = math.floor((xy[1] - cm.spec.origin[1]) / res)
    if 0 <= i < cm.spec.nx and 0 <= j < cm.spec.ny and np.isfinite(h[i, j]):
        return float(h[i, j])
    return 0.0


def attitude_for(states, U, cm: CostMap, cfg: PlannerConfig, inertia: InertiaModel,
                 current=(0.0, 0.0, 0.0, 0.0), heading: float = 0.0) -> AttitudeSpline | None:
    """Roll/pitch spline toward the plane through the final footholds."""
    durations = [U.phases[s.phase].duration for s in states[:-1]]
    if not any(T > 0 for T in durations):
        return None
    feet = [(*xy, _terrain_height(cm, xy)) for xy in states[-1].feet.values()]
    try:
        target = fit_support_plane(feet, heading)
    except DegeneratePlaneError:
        return None
    bounds = max_angular_acceleration(inertia, cfg.margin)
    if not (bounds[0] > 0 and bounds[1] > 0):
        return None
    return plan_attitude(current, target, bounds, durations)


def plan(
    s0: PreviewState,
    cmd: UserCommand,
    cm: CostMap,
    cfg: PlannerConfig = PlannerConfig(),
    inertia: InertiaModel | None = None,
    phase_offset: int = 0,
    executor=None,
    warm_start: np.ndarray | None = None,
) -> PlanResult:
    """Optimise ``cfg.horizon`` cycles starting at cycle position ``phase_offset``.

    ``warm_start`` is a unit-scaled decision vector, typically ``cma.x`` of the
    previous receding plan; it replaces the nominal start when it scores better.
    """
    enc = DecisionEncoding.build(cfg, phase_offset)
    obj = CoupledObjective(s0, cmd, cm, cfg, enc)
    x0 = enc.to_unit(enc.initial(cfg, cmd))
    sigma = cfg.sigma0
    if warm_start is not None and len(warm_start) == enc.dimension:
        warm = np.clip(np.asarray(warm_start, dtype=float), 0.0, 1.0)
        if obj(warm) < obj(x0):
            x0, sigma = warm, cfg.warm_sigma
    best = None
    for attempt in range(1 + max(0, cfg.feasibility_retries)):
        run_obj = obj
        if best is not None:
            x0 = np.clip(best[1].x, 0.0, 1.0)
            # penalty escalation: each retry weighs the support constraint ten times more
            w = replace(cfg.weights, stability=cfg.weights.stability * 10.0 ** attempt)
            run_obj = CoupledObjective(s0, cmd, cm, replace(cfg, weights=w), enc)
        res = cmaes.optimize(run_obj, x0, cmaes.CmaConfig(
            enc.dimension, sigma0=sigma, lower=np.zeros(enc.dimension), upper=np.ones(enc.dimension),
            max_evals=cfg.max_evals, seed=cfg.seed + 7919 * attempt, executor=executor,
            popsize=cfg.popsize or None, active=cfg.active_cma))
        if not res.fun < INFEASIBLE:
            continue
        U = enc.decode(np.clip(enc.from_unit(res.x), enc.lower, enc.upper))
        cb, _ = obj.breakdown(U)
        states = rollout(s0, U, cfg.margin, cfg.params, cfg.offsets, strict=False)
        slack = min_phase_slack(states, cfg.margin)
        worst_cell = max((cm.cost_at(xy, default=1.0) for _, xy in planned_footholds(states, U)), default=0.0)
        ok = slack >= -1e-6 and worst_cell <= cfg.terrain_threshold
        # feasible plans compare by cost, infeasible ones by how far they leave the support
        key = (not ok, 0.0 if ok else -slack, cb.total(cfg.weights))
        if best is None or key < best[0]:
            best = (key, res, U, cb, states, slack)
        if ok:
            break
    if best is None:
        raise PlannerError("optimiser found no plan with a valid support geometry")
    _, res, U, cb, states, slack = best
    att = attitude_for(states, U, cm, cfg, inertia or InertiaModel(), heading=cmd.heading)
    return PlanResult(U, states, att, cb, cb.total(cfg.weights), planned_footholds(states, U), slack, res)


def receding_step(state: PreviewState, U: ControlSequence, cfg: PlannerConfig = PlannerConfig(),
                  n_phases: int = 1) -> tuple[PreviewState, int]:
    """Execute the first ``n_phases`` positive-duration phases of ``U``.

    Returns the state after them and the number of sequence entries consumed
    (including skipped zero-duration ones), so callers can keep the cycle
    position.
    """
    if not U.phases:
        raise PlannerError("empty plan")
    taken, consumed = [], 0
    for ph in U.phases:
        if len(taken) == n_phases:
            break
        consumed += 1
        if ph.duration > 0:
            taken.append(ph)
    if not taken:
        raise PlannerError("plan has no positive-duration phase")
    states = rollout(state, ControlSequence(tuple(taken)), cfg.margin, cfg.params, cfg.offsets, strict=False)
    end = states[-1]
    return replace(end, support=None, phase=-1), consumed


@dataclass
class WalkLog:
    plans: list[PlanResult]
    states: list[PreviewState]
    steps: int
    violations: int
    min_slack: float


def walk(
    s0: PreviewState,
    cmd: UserCommand,
    cm: CostMap,
    n_plans: int,
    cfg: PlannerConfig = PlannerConfig(),
    phases_per_plan: int | None = None,
    inertia: InertiaModel | None = None,
) -> WalkLog:
    """Receding-horizon loop; each plan executes ``phases_per_plan`` phases
    (default ``cfg.executed_phases``) and warm-starts the next one."""
    per = phases_per_plan or cfg.executed_phases
    state, offset = s0, 0
    plans, states = [], [s0]
    steps = violations = 0
    worst = math.inf
    warm = None
    for k in range(n_plans):
        res = plan(state, cmd, cm, replace(cfg, seed=cfg.seed + k), inertia, offset, warm_start=warm)
        executed = [s for s in res.states[:-1] if s.phase < per]
        ex_states = res.states[: len(executed) + 1]
        worst = min(worst, min_phase_slack(ex_states, cfg.margin))
        violations += sum(1 for a, b in zip(ex_states[:-1], ex_states[1:])
                          if min_phase_slack([a, b], cfg.margin) < -1e-6)
        steps += sum(1 for s in executed if res.U.phases[s.phase].kind == "swing")
        state, consumed = receding_step(state, res.U, cfg, len(executed))
        warm = DecisionEncoding.build(cfg, offset).rotate(res.cma.x, consumed)
        offset = (offset + consumed) % len(cfg.cycle)
        plans.append(res)
        states.append(state)
    return WalkLog(plans, states, steps, violations, worst)
