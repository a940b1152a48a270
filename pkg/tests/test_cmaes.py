import math

import numpy as np
import pytest

from legplan.cmaes import CmaConfig, CmaConfigError, _Strategy, optimize, write_trace_csv


def sphere(x):
    return float(np.sum(np.asarray(x) ** 2))


def rosenbrock(x):
    x = np.asarray(x)
    return float(np.sum(100.0 * (x[1:] - x[:-1] ** 2) ** 2 + (1 - x[:-1]) ** 2))


class TestConfig:
    def test_default_population(self):
        assert CmaConfig(10).popsize == 4 + int(3 * math.log(10))

    @pytest.mark.parametrize("kw", [{"dimension": 0}, {"dimension": 3, "sigma0": 0.0},
                                    {"dimension": 2, "popsize": 2},
                                    {"dimension": 2, "lower": [0, 0], "upper": [0, 1]},
                                    {"dimension": 2, "lower": [0, 0, 0]}])
    def test_invalid(self, kw):
        with pytest.raises(CmaConfigError):
            CmaConfig(**kw)

    def test_x0_checks(self):
        with pytest.raises(CmaConfigError):
            optimize(sphere, [0.0, 0.0], CmaConfig(3))
        with pytest.raises(CmaConfigError):
            optimize(sphere, [2.0, 0.0], CmaConfig(2, lower=[-1, -1], upper=[1, 1]))


class TestStrategy:
    def test_weights(self):
        es = _Strategy(np.zeros(10), 0.5, 10, np.random.default_rng(0))
        assert es.weights.sum() == pytest.approx(1.0)
        assert np.all(np.diff(es.weights) < 0)
        assert 1 < es.mueff < es.mu

    def test_active_weights_keep_covariance_positive(self):
        rng = np.random.default_rng(1)
        es = _Strategy(np.zeros(5), 1.0, 12, rng, active=True)
        assert es.cov_weights[-1] < 0
        for _ in range(200):
            xs = np.array([es.sample() for _ in range(es.lam)])
            order = np.argsort([rosenbrock(x) for x in xs], kind="stable")
            es.tell(xs, order)
            assert es.min_eigenvalue > 0


class TestOptimize:
    def test_sphere(self):
        res = optimize(sphere, np.full(10, 1.0), CmaConfig(10, sigma0=0.5, max_evals=5000, ftarget=1e-10))
        assert res.fun <= 1e-10
        assert res.evaluations <= 5000

    def test_rosenbrock_2d(self):
        res = optimize(rosenbrock, [-1.0, 1.0], CmaConfig(2, sigma0=0.5, max_evals=20000, ftarget=1e-6))
        assert res.fun <= 1e-6
        assert np.allclose(res.x, [1, 1], atol=1e-2)

    def test_deterministic(self):
        cfg = CmaConfig(4, sigma0=0.3, max_evals=600, seed=42)
        a = optimize(rosenbrock, np.zeros(4), cfg)
        b = optimize(rosenbrock, np.zeros(4), cfg)
        assert a.fun == b.fun
        assert np.array_equal(a.x, b.x)
        assert a.trace == b.trace

    def test_seed_changes_run(self):
        a = optimize(rosenbrock, np.zeros(4), CmaConfig(4, max_evals=300, seed=1))
        b = optimize(rosenbrock, np.zeros(4), CmaConfig(4, max_evals=300, seed=2))
        assert not np.array_equal(a.x, b.x)

    def test_bounds_respected(self):
        seen = []

        def f(x):
            seen.append(np.array(x))
            return float(np.sum((x - 3.0) ** 2))

        lo, hi = np.full(3, -1.0), np.full(3, 1.0)
        res = optimize(f, np.zeros(3), CmaConfig(3, sigma0=0.5, lower=lo, upper=hi, max_evals=3000))
        assert all(np.all(x >= lo) and np.all(x <= hi) for x in seen)
        # constrained optimum sits on the corner
        assert np.allclose(res.x, 1.0, atol=1e-3)

    def test_budget_and_trace(self, tmp_path):
        res = optimize(sphere, np.ones(3), CmaConfig(3, max_evals=200))
        assert res.evaluations <= 200
        assert res.reason == "max_evals"
        best = [t[1] for t in res.trace]
        assert all(b1 <= b0 for b0, b1 in zip(best, best[1:]))
        write_trace_csv(res, tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "generation,best,median,sigma"
        assert len(lines) == len(res.trace) + 1

    def test_ftarget_stops_early(self):
        res = optimize(sphere, np.ones(3), CmaConfig(3, max_evals=100000, ftarget=1e-3))
        assert res.reason == "ftarget"
        assert res.fun <= 1e-3

    def test_nan_objective_rejected(self):
        with pytest.raises(ValueError):
            optimize(lambda x: float("nan"), np.zeros(2), CmaConfig(2))

    def test_executor_gives_same_result(self):
        from concurrent.futures import ThreadPoolExecutor

        cfg = CmaConfig(3, max_evals=400, seed=3)
        plain = optimize(rosenbrock, np.zeros(3), cfg)
        with ThreadPoolExecutor(2) as ex:
            pooled = optimize(rosenbrock, np.zeros(3), CmaConfig(3, max_evals=400, seed=3, executor=ex))
        assert plain.fun == pooled.fun

    def test_active_variant_converges(self):
        res = optimize(rosenbrock, np.zeros(5), CmaConfig(5, max_evals=20000, ftarget=1e-8, active=True))
        assert res.fun <= 1e-8
