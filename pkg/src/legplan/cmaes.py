"""(mu/mu_w, lambda)-CMA-ES with box bounds.

Defaults follow Hansen's tutorial parameter settings. Candidates outside the
box are resampled up to ``max_resample`` times; survivors are clipped and
the ranking value gets a quadratic out-of-bounds penalty. Reported values
are always the raw objective at the (in-bounds) evaluated point.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np


class CmaConfigError(ValueError):
    pass


@dataclass
class CmaConfig:
    dimension: int
    sigma0: float = 0.3
    popsize: int | None = None
    lower: Sequence[float] | None = None
    upper: Sequence[float] | None = None
    max_evals: int = 10_000
    ftarget: float = -math.inf
    tolx: float = 1e-12
    tolfun: float = 1e-14
    seed: int = 0
    max_resample: int = 100
    penalty: float = 1e4
    restarts: int = 0  # IPOP restarts, population doubled each time
    active: bool = False  # negative weights for the worse half in the covariance update
    executor: object | None = None  # anything with .map(fn, iterable)

    def __post_init__(self):
        if self.dimension < 1:
            raise CmaConfigError("dimension must be >= 1")
        if self.popsize is None:
            self.popsize = 4 + int(3 * math.log(self.dimension))
        if self.popsize < 4:
            raise CmaConfigError("population must be >= 4")
        if not self.sigma0 > 0:
            raise CmaConfigError("sigma0 must be positive")
        for name in ("lower", "upper"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float)
                if v.shape != (self.dimension,):
                    raise CmaConfigError(f"{name} bound has wrong shape")
                setattr(self, name, v)
        if self.lower is not None and self.upper is not None and np.any(self.lower >= self.upper):
            raise CmaConfigError("need lower < upper")


@dataclass
class CmaResult:
    x: np.ndarray
    fun: float
    evaluations: int
    reason: str
    trace: list[tuple[int, float, float, float]] = field(default_factory=list)
    generations: int = 0


class _Strategy:
    """State of one CMA-ES run; ``ask``/``tell`` style."""

    def __init__(self, x0: np.ndarray, sigma: float, lam: int, rng: np.random.Generator, active: bool = False):
        n = len(x0)
        self.n = n
        self.lam = lam
        self.mu = lam // 2
        raw = math.log((lam + 1) / 2) - np.log(np.arange(1, lam + 1))
        pos = raw[: self.mu]
        self.weights = pos / pos.sum()
        self.mueff = 1.0 / np.sum(self.weights ** 2)
        self.cc = (4 + self.mueff / n) / (n + 4 + 2 * self.mueff / n)
        self.cs = (self.mueff + 2) / (n + self.mueff + 5)
        self.c1 = 2 / ((n + 1.3) ** 2 + self.mueff)
        self.cmu = min(1 - self.c1, 2 * (self.mueff - 2 + 1 / self.mueff) / ((n + 2) ** 2 + self.mueff))
        self.damps = 1 + 2 * max(0.0, math.sqrt((self.mueff - 1) / (n + 1)) - 1) + self.cs
        # covariance weights: the recombination weights, extended with
        # negative weights for the worse half when active
        self.cov_weights = np.zeros(lam)
        self.cov_weights[: self.mu] = self.weights
        if active:
            neg = raw[self.mu:]
            neg = neg[neg < 0]
            mueff_neg = neg.sum() ** 2 / np.sum(neg ** 2)
            scale = min(
                1 + self.c1 / self.cmu,
                1 + 2 * mueff_neg / (self.mueff + 2),
                (1 - self.c1 - self.cmu) / (n * self.cmu),
            )
            self.cov_weights[lam - neg.size:] = scale * neg / np.abs(neg).sum()
        self.chin = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))
        self.mean = x0.astype(float).copy()
        self.sigma = float(sigma)
        self.pc = np.zeros(n)
        self.ps = np.zeros(n)
        self.C = np.eye(n)
        self.B = np.eye(n)
        self.D = np.ones(n)
        self.invsqrtC = np.eye(n)
        self.rng = rng
        self.gen = 0

    def sample(self) -> np.ndarray:
        z = self.rng.standard_normal(self.n)
        return self.mean + self.sigma * (self.B @ (self.D * z))

    def tell(self, xs: np.ndarray, order: np.ndarray) -> None:
        n = self.n
        old = self.mean
        sel = xs[order[: self.mu]]
        self.mean = self.weights @ sel
        y = (self.mean - old) / self.sigma
        self.ps = (1 - self.cs) * self.ps + math.sqrt(self.cs * (2 - self.cs) * self.mueff) * (self.invsqrtC @ y)
        self.gen += 1
        hsig = (np.linalg.norm(self.ps) / math.sqrt(1 - (1 - self.cs) ** (2 * self.gen)) / self.chin) < 1.4 + 2 / (n + 1)
        self.pc = (1 - self.cc) * self.pc + hsig * math.sqrt(self.cc * (2 - self.cc) * self.mueff) * y
        ys = (xs[order] - old) / self.sigma
        cw = self.cov_weights.copy()
        neg = cw < 0
        if np.any(neg):
            # rescale negative contributions so they cannot destroy positive definiteness
            z = ys[neg] @ self.invsqrtC.T
            cw[neg] *= n / np.maximum(np.sum(z * z, axis=1), 1e-300)
        self.C = (
            (1 - self.c1 - self.cmu * self.cov_weights.sum()) * self.C
            + self.c1 * (np.outer(self.pc, self.pc) + (1 - hsig) * self.cc * (2 - self.cc) * self.C)
            + self.cmu * (ys.T * cw) @ ys
        )
        self.sigma *= math.exp((self.cs / self.damps) * (np.linalg.norm(self.ps) / self.chin - 1))
        self._repair()

    def _repair(self) -> None:
        self.C = 0.5 * (self.C + self.C.T)
        vals, vecs = np.linalg.eigh(self.C)
        floor = max(vals[-1], 1e-300) * 1e-14
        if vals[0] < floor:
            vals = np.maximum(vals, floor)
            self.C = (vecs * vals) @ vecs.T
            self.C = 0.5 * (self.C + self.C.T)
        assert vals[0] > 0, "covariance lost positive definiteness"
        self.D = np.sqrt(vals)
        self.B = vecs
        self.invsqrtC = (vecs / self.D) @ vecs.T

    @property
    def min_eigenvalue(self) -> float:
        return float(self.D.min() ** 2)


def _in_box(x, lo, hi) -> bool:
    return (lo is None or np.all(x >= lo)) and (hi is None or np.all(x <= hi))


def optimize(objective: Callable[[np.ndarray], float], x0: Sequence[float], cfg: CmaConfig) -> CmaResult:
    """Minimise ``objective`` from ``x0``. Deterministic for a given seed."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (cfg.dimension,):
        raise CmaConfigError("x0 has wrong dimension")
    lo, hi = cfg.lower, cfg.upper
    if not _in_box(x0, lo, hi):
        raise CmaConfigError("x0 outside bounds")
    rng = np.random.default_rng(cfg.seed)
    mapper = cfg.executor.map if cfg.executor is not None else map

    def raw(x):
        f = float(objective(x))
        if math.isnan(f) or f == -math.inf:
            raise ValueError(f"objective returned {f}")
        return f

    best_x, best_f = x0.copy(), raw(x0)
    evals = 1
    trace: list[tuple[int, float, float, float]] = []
    reason = "max_evals"
    lam = cfg.popsize
    gen_total = 0
    for restart in range(cfg.restarts + 1):
        es = _Strategy(x0 if restart == 0 else best_x, cfg.sigma0, lam, rng, cfg.active)
        history: list[float] = []
        reason = "max_evals"
        while True:
            if evals + es.lam > cfg.max_evals:
                reason = "max_evals"
                break
            xs = np.empty((es.lam, es.n))
            clipped = np.empty_like(xs)
            for k in range(es.lam):
                x = es.sample()
                tries = 1
                while not _in_box(x, lo, hi) and tries < cfg.max_resample:
                    x = es.sample()
                    tries += 1
                xs[k] = x
                c = x
                if lo is not None:
                    c = np.maximum(c, lo)
                if hi is not None:
                    c = np.minimum(c, hi)
                clipped[k] = c
            fvals = np.array(list(mapper(raw, list(clipped))))
            evals += es.lam
            ranked = fvals + cfg.penalty * np.sum((xs - clipped) ** 2, axis=1)
            # stable sort keeps ties in sampling order, which keeps runs reproducible
            order = np.argsort(ranked, kind="stable")
            k = int(np.argmin(fvals))
            if fvals[k] < best_f:
                best_f, best_x = float(fvals[k]), clipped[k].copy()
            es.tell(xs, order)
            gen_total += 1
            trace.append((gen_total, best_f, float(np.median(fvals)), es.sigma))
            history.append(float(fvals[order[0]]))
            if best_f <= cfg.ftarget:
                reason = "ftarget"
                break
            if es.sigma * float(es.D.max()) < cfg.tolx:
                reason = "tolx"
                break
            if len(history) > 10 + int(30 * es.n / es.lam):
                recent = history[-(10 + int(30 * es.n / es.lam)):]
                if max(recent) - min(recent) < cfg.tolfun and np.ptp(fvals) < cfg.tolfun:
                    reason = "tolfun"
                    break
        if reason in ("ftarget", "max_evals"):
            break
        lam *= 2
    return CmaResult(best_x, best_f, evals, reason, trace, gen_total)


def write_trace_csv(result: CmaResult, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["generation", "best", "median", "sigma"])
        for g, b, m, s in result.trace:
            wr.writerow([g, repr(b), repr(m), repr(s)])
