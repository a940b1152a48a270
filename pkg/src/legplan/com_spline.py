"""CoM trajectory generation for the decoupled pipeline.

One quintic per phase and axis, in local phase time t in [0, T]:
``x(t) = sum_k c_k t^k``. The coefficients minimise the weighted squared
acceleration subject to initial-state and C2 junction equalities and to
sampled linear COP constraints ``p = x - (h/g) xdd`` inside the shrunk
support polygon of each phase.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .geometry import SupportGeometryError, shrunk_support_lines
from .preview import DIAGONAL, LEGS
from .qp import QpProblem, QpSolution, solve

DEFAULT_DT = 0.02
GRAVITY = 9.81


class MarginTooLargeError(ValueError):
    pass


class ComPlanInfeasibleError(RuntimeError):
    pass


@dataclass(frozen=True)
class SplinePhase:
    kind: str  # "swing" | "four_leg"
    duration: float
    feet: Mapping[str, tuple[float, float]]  # support feet during the phase
    lines: np.ndarray
    swing_leg: str | None = None
    target: tuple[float, float, float] | None = None  # swing foot landing point


@dataclass(frozen=True)
class PhasePlan:
    phases: tuple[SplinePhase, ...]
    margin: float
    t_swing: float
    dt: float = DEFAULT_DT

    @property
    def active(self) -> list[int]:
        return [k for k, ph in enumerate(self.phases) if ph.duration > 0]

    @property
    def duration(self) -> float:
        return sum(ph.duration for ph in self.phases)


def _as_steps(plan) -> list[tuple[str, tuple[float, float, float]]]:
    steps = getattr(plan, "steps", plan)
    out = []
    for s in steps:
        if hasattr(s, "leg"):
            out.append((s.leg, tuple(s.position)))
        else:
            leg, pos = s
            out.append((leg, tuple(pos)))
    return out


def _shrunk(feet: Mapping[str, Sequence[float]], r: float) -> np.ndarray:
    try:
        return shrunk_support_lines([f[:2] for f in feet.values()], r)
    except SupportGeometryError as exc:
        raise MarginTooLargeError(str(exc)) from exc


def build_phase_plan(
    plan,
    stance0: Mapping[str, Sequence[float]],
    t_swing: float,
    r: float,
    dt: float = DEFAULT_DT,
    lead_in: float | None = None,
) -> PhasePlan:
    """Sequence swing and four-leg phases for a foothold plan.

    A four-leg phase of ``t_4ls = r * t_swing`` precedes every swing whose leg
    is diagonal to the previous swing leg. A leading four-leg phase (default
    ``t_swing`` long, zero when ``r = 0``) lets the COP leave the centre of the
    initial stance before the first swing.
    """
    steps = _as_steps(plan)
    if not steps:
        raise ValueError("empty foothold plan")
    if set(stance0) != set(LEGS):
        raise ValueError("initial stance needs all four legs")
    if not (t_swing > 0 and r >= 0 and dt > 0):
        raise ValueError("need t_swing > 0, r >= 0, dt > 0")
    feet = {leg: tuple(float(v) for v in stance0[leg][:2]) for leg in LEGS}
    t4 = r * t_swing
    lead = (t_swing if r > 0 else 0.0) if lead_in is None else lead_in
    phases = [SplinePhase("four_leg", lead, dict(feet), _shrunk(feet, r))]
    prev = None
    for leg, pos in steps:
        if leg not in feet:
            raise ValueError(f"unknown leg {leg!r}")
        if prev is not None and DIAGONAL[prev] == leg:
            phases.append(SplinePhase("four_leg", t4, dict(feet), _shrunk(feet, r)))
        support = {k: v for k, v in feet.items() if k != leg}
        phases.append(SplinePhase("swing", t_swing, support, _shrunk(support, r), leg, tuple(pos)))
        feet[leg] = (float(pos[0]), float(pos[1]))
        prev = leg
    return PhasePlan(tuple(phases), r, t_swing, dt)


def _basis(t: float) -> np.ndarray:
    return t ** np.arange(6)


def _basis_d1(t: float) -> np.ndarray:
    k = np.arange(6)
    return np.where(k >= 1, k * t ** np.maximum(k - 1, 0), 0.0)


def _basis_d2(t: float) -> np.ndarray:
    k = np.arange(6)
    return np.where(k >= 2, k * (k - 1) * t ** np.maximum(k - 2, 0), 0.0)


def gram_matrix(T: float) -> np.ndarray:
    """``G[i, j] = integral_0^T (t^i)'' (t^j)'' dt`` for the monomial basis."""
    G = np.zeros((6, 6))
    for i in range(2, 6):
        for j in range(2, 6):
            p = i + j - 3
            G[i, j] = i * (i - 1) * j * (j - 1) * T ** p / p
    return G


def _sample_times(T: float, dt: float, last: bool) -> list[float]:
    n = int(math.ceil(T / dt - 1e-9))
    ts = [k * dt for k in range(n) if k * dt < T - 1e-12]
    if last:
        ts.append(T)
    return ts


@dataclass
class ComState:
    pos: tuple[float, float]
    vel: tuple[float, float] = (0.0, 0.0)
    acc: tuple[float, float] = (0.0, 0.0)


def assemble_qp(
    pp: PhasePlan,
    s0: ComState,
    h: float,
    weights: tuple[float, float] = (1.0, 1.5),
    gravity: float = GRAVITY,
    terminal_rest: bool = False,
) -> QpProblem:
    """QP over the stacked coefficients ``[x0..x5, y0..y5]`` of each active phase."""
    if not h > 0:
        raise ValueError("h must be positive")
    act = pp.active
    if not act:
        raise ValueError("phase plan has no positive-duration phase")
    nv = 12 * len(act)
    H = np.zeros((nv, nv))
    A_rows, b_rows, C_rows, d_rows = [], [], [], []
    k_cop = h / gravity
    for slot, idx in enumerate(act):
        ph = pp.phases[idx]
        G = gram_matrix(ph.duration)
        o = 12 * slot
        H[o:o + 6, o:o + 6] = 2.0 * weights[0] * G
        H[o + 6:o + 12, o + 6:o + 12] = 2.0 * weights[1] * G
        for ts in _sample_times(ph.duration, pp.dt, slot == len(act) - 1):
            row = _basis(ts) - k_cop * _basis_d2(ts)
            for pl, ql, rl in ph.lines:
                c = np.zeros(nv)
                c[o:o + 6] = pl * row
                c[o + 6:o + 12] = ql * row
                C_rows.append(c)
                d_rows.append(-rl)
    for axis in range(2):
        for f, val in ((_basis, s0.pos), (_basis_d1, s0.vel), (_basis_d2, s0.acc)):
            a = np.zeros(nv)
            a[6 * axis:6 * axis + 6] = f(0.0)
            A_rows.append(a)
            b_rows.append(val[axis])
    for slot in range(len(act) - 1):
        T = pp.phases[act[slot]].duration
        for axis in range(2):
            for f in (_basis, _basis_d1, _basis_d2):
                a = np.zeros(nv)
                o = 12 * slot + 6 * axis
                a[o:o + 6] = f(T)
                a[o + 12:o + 18] = -f(0.0)
                A_rows.append(a)
                b_rows.append(0.0)
    if terminal_rest:
        T = pp.phases[act[-1]].duration
        for axis in range(2):
            for f in (_basis_d1, _basis_d2):
                a = np.zeros(nv)
                o = 12 * (len(act) - 1) + 6 * axis
                a[o:o + 6] = f(T)
                A_rows.append(a)
                b_rows.append(0.0)
    return QpProblem(H, np.zeros(nv), np.array(A_rows), np.array(b_rows),
                     np.array(C_rows).reshape(-1, nv), np.array(d_rows))


@dataclass
class QuinticSpline:
    coeffs: np.ndarray  # (n_phases, 2, 6), local time per phase
    durations: np.ndarray
    phase_ids: tuple[int, ...]  # index into PhasePlan.phases
    height: float
    gravity: float = GRAVITY
    solution: QpSolution | None = field(default=None, repr=False)

    @property
    def boundaries(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.durations)])

    @property
    def duration(self) -> float:
        return float(np.sum(self.durations))

    def locate(self, t: float) -> tuple[int, float]:
        b = self.boundaries
        t = min(max(t, 0.0), b[-1])
        k = int(np.searchsorted(b, t, side="right") - 1)
        k = min(k, len(self.durations) - 1)
        return k, t - b[k]

    def evaluate_local(self, k: int, tau: float):
        c = self.coeffs[k]
        return c @ _basis(tau), c @ _basis_d1(tau), c @ _basis_d2(tau)

    def evaluate(self, t: float):
        """(position, velocity, acceleration) 2-vectors at global time ``t``."""
        return self.evaluate_local(*self.locate(t))

    def cop_local(self, k: int, tau: float) -> np.ndarray:
        x, _, a = self.evaluate_local(k, tau)
        return x - (self.height / self.gravity) * a

    def acceleration_cost(self, weights: tuple[float, float] = (1.0, 1.5)) -> float:
        """``integral (w_x xdd^2 + w_y ydd^2) dt`` by exact polynomial integration."""
        P = np.polynomial.polynomial
        total = 0.0
        for k, T in enumerate(self.durations):
            for axis in range(2):
                acc = P.polyder(self.coeffs[k, axis], 2)
                total += weights[axis] * P.polyval(T, P.polyint(P.polymul(acc, acc)))
        return float(total)

    def junction_errors(self) -> np.ndarray:
        """Max |jump| in (pos, vel, acc) over all internal junctions."""
        err = np.zeros(3)
        for k in range(len(self.durations) - 1):
            a = self.evaluate_local(k, self.durations[k])
            b = self.evaluate_local(k + 1, 0.0)
            err = np.maximum(err, [np.abs(a[i] - b[i]).max() for i in range(3)])
        return err

    def sample(self, dt: float = 0.01) -> list[tuple]:
        rows = []
        for k, T in enumerate(self.durations):
            t0 = self.boundaries[k]
            last = k == len(self.durations) - 1
            for tau in _sample_times(T, dt, last):
                x, v, a = self.evaluate_local(k, tau)
                p = x - (self.height / self.gravity) * a
                rows.append((t0 + tau, x[0], x[1], v[0], v[1], a[0], a[1], p[0], p[1], self.phase_ids[k]))
        return rows


def cop_slacks(spline: QuinticSpline, pp: PhasePlan, dt: float | None = None) -> np.ndarray:
    """Line slacks of the sampled COP against each phase's shrunk polygon."""
    dt = pp.dt if dt is None else dt
    out = []
    n = len(spline.durations)
    for k, idx in enumerate(spline.phase_ids):
        lines = pp.phases[idx].lines
        for tau in _sample_times(spline.durations[k], dt, k == n - 1):
            p = spline.cop_local(k, tau)
            out.extend(lines[:, 0] * p[0] + lines[:, 1] * p[1] + lines[:, 2])
    return np.array(out)


def generate_com_trajectory(
    pp: PhasePlan,
    s0: ComState,
    h: float = 0.58,
    weights: tuple[float, float] = (1.0, 1.5),
    tol: float = 1e-9,
    gravity: float = GRAVITY,
    terminal_rest: bool = False,
) -> QuinticSpline:
    qp = assemble_qp(pp, s0, h, weights, gravity, terminal_rest)
    sol = solve(qp, tol=tol)
    if sol.status == "infeasible":
        raise ComPlanInfeasibleError(
            "no COP-feasible CoM trajectory; try a longer swing time or a smaller margin")
    if sol.status != "optimal":
        raise ComPlanInfeasibleError(f"QP solver stopped with status {sol.status}")
    act = pp.active
    coeffs = sol.x.reshape(len(act), 2, 6)
    spline = QuinticSpline(coeffs, np.array([pp.phases[i].duration for i in act]), tuple(act), h, gravity, sol)
    slack = cop_slacks(spline, pp)
    if slack.size and slack.min() < -1e-6:
        raise ComPlanInfeasibleError(f"COP constraint violated by {-slack.min():.3g} m")
    if spline.junction_errors().max() > 1e-9:
        raise ComPlanInfeasibleError("spline lost C2 continuity")
    return spline


def swing_profile(
    start: Sequence[float],
    goal: Sequence[float],
    lift: float,
    n: int = 21,
    outward: Sequence[float] | None = None,
    outward_offset: float = 0.0,
) -> np.ndarray:
    """Sampled swing-foot path from ``start`` to ``goal`` (both 3D).

    The apex sits ``lift + max(0, goal_z - start_z)`` above the start. When
    stepping up, the path bulges by ``outward_offset`` along the horizontal
    unit direction ``outward``.
    """
    if lift < 0:
        raise ValueError("lift must be non-negative")
    if n < 2:
        raise ValueError("need at least 2 samples")
    a = np.asarray(start, dtype=float)
    b = np.asarray(goal, dtype=float)
    apex = a[2] + lift + max(0.0, b[2] - a[2])
    s = np.linspace(0.0, 1.0, n)
    blend = s * s * (3 - 2 * s)
    pts = a + np.outer(blend, b - a)
    bump = np.sin(np.pi * s)
    pts[:, 2] = np.where(s <= 0.5, a[2] + (apex - a[2]) * bump, b[2] + (apex - b[2]) * bump)
    if outward is not None and outward_offset and b[2] > a[2]:
        u = np.asarray(outward, dtype=float)[:2]
        u = u / np.linalg.norm(u)
        pts[:, :2] += np.outer(outward_offset * bump, u)
    pts[0], pts[-1] = a, b
    return pts


def export_spline_csv(spline: QuinticSpline, path: str | Path, dt: float = 0.01) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "x", "y", "xd", "yd", "xdd", "ydd", "px", "py", "phase_id"])
        for row in spline.sample(dt):
            wr.writerow([f"{v:.9g}" if isinstance(v, float) else v for v in row])
