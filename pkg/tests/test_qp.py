import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from legplan.qp import QpError, QpProblem, kkt_residuals, solve

cp = pytest.importorskip("cvxpy")


def random_problem(rng, n, me, mi, psd_rank=None):
    k = n if psd_rank is None else psd_rank
    L = rng.normal(size=(n, k))
    H = L @ L.T + (1e-3 * np.eye(n) if psd_rank is None else 0)
    g = rng.normal(size=n)
    A = rng.normal(size=(me, n)) if me else None
    x_feas = rng.normal(size=n)
    b = A @ x_feas if me else None
    C = rng.normal(size=(mi, n)) if mi else None
    d = C @ x_feas - rng.uniform(0, 1, size=mi) if mi else None
    return QpProblem(H, g, A, b, C, d)


def cvxpy_objective(p: QpProblem):
    x = cp.Variable(p.n)
    cons = []
    if p.A.shape[0]:
        cons.append(p.A @ x == p.b)
    if p.C.shape[0]:
        cons.append(p.C @ x >= p.d)
    Hs = 0.5 * (p.H + p.H.T)
    obj = cp.Minimize(0.5 * cp.quad_form(x, cp.psd_wrap(Hs)) + p.g @ x)
    prob = cp.Problem(obj, cons)
    prob.solve(solver=cp.CLARABEL)
    return prob.status, prob.value


def projected_gradient_box(H, g, lo, hi, iters=20000):
    """Independent oracle for box constraints: projected gradient with step 1/L."""
    L = np.linalg.eigvalsh(H)[-1]
    x = np.clip(np.zeros(len(g)), lo, hi)
    for _ in range(iters):
        x = np.clip(x - (H @ x + g) / L, lo, hi)
    return x


class TestAgainstCvxpy:
    @pytest.mark.parametrize("seed", range(40))
    def test_random_strictly_convex(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 9))
        p = random_problem(rng, n, int(rng.integers(0, n // 2 + 1)), int(rng.integers(0, 3 * n)))
        sol = solve(p)
        assert sol.status == "optimal"
        status, val = cvxpy_objective(p)
        assert status == "optimal"
        assert sol.objective == pytest.approx(val, rel=1e-6, abs=1e-6)
        stat, prim, comp = kkt_residuals(p, sol.x, sol.lam, sol.mu)
        assert max(stat, prim, comp) <= 1e-8

    @pytest.mark.parametrize("seed", range(10))
    def test_semidefinite_hessian(self, seed):
        rng = np.random.default_rng(100 + seed)
        n = 6
        p = random_problem(rng, n, 1, 0, psd_rank=3)
        # box rows keep the problem bounded in the flat directions
        C = np.vstack([np.eye(n), -np.eye(n)])
        p = QpProblem(p.H, p.g, p.A, p.b, C, -2.0 * np.ones(2 * n))
        if np.any(np.abs(p.A @ np.zeros(n) - p.b) > 0) and np.abs(p.b).max() > 1.5:
            p = QpProblem(p.H, p.g, p.A, np.zeros(1), C, -2.0 * np.ones(2 * n))
        sol = solve(p)
        assert sol.status == "optimal"
        status, val = cvxpy_objective(p)
        assert sol.objective == pytest.approx(val, rel=1e-6, abs=1e-6)


class TestBoxOracle:
    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000))
    def test_matches_projected_gradient(self, seed):
        rng = np.random.default_rng(seed)
        n = 5
        L = rng.normal(size=(n, n))
        H = L @ L.T + 0.5 * np.eye(n)
        g = rng.normal(size=n) * 3
        lo, hi = -np.ones(n), np.ones(n)
        C = np.vstack([np.eye(n), -np.eye(n)])
        d = np.concatenate([lo, -hi])
        sol = solve(QpProblem(H, g, C=C, d=d))
        ref = projected_gradient_box(H, g, lo, hi)
        assert np.allclose(sol.x, ref, atol=1e-6)


class TestSpecialCases:
    def test_unconstrained(self):
        H = np.array([[2.0, 0.5], [0.5, 1.0]])
        g = np.array([1.0, -1.0])
        sol = solve(QpProblem(H, g))
        assert np.allclose(sol.x, np.linalg.solve(H, -g))

    def test_equality_only_multipliers(self):
        H = np.eye(2)
        sol = solve(QpProblem(H, np.zeros(2), A=[[1.0, 1.0]], b=[2.0]))
        assert np.allclose(sol.x, [1.0, 1.0])
        # H x + g = A' lam
        assert sol.lam == pytest.approx([1.0])

    def test_redundant_equalities(self):
        A = np.array([[1.0, 1.0], [2.0, 2.0]])
        sol = solve(QpProblem(np.eye(2), np.zeros(2), A=A, b=[2.0, 4.0]))
        assert sol.status == "optimal"
        assert np.allclose(sol.x, [1.0, 1.0])

    def test_inconsistent_equalities(self):
        A = np.array([[1.0, 1.0], [1.0, 1.0]])
        assert solve(QpProblem(np.eye(2), np.zeros(2), A=A, b=[1.0, 2.0])).status == "infeasible"

    def test_infeasible_inequalities(self):
        C = np.array([[1.0, 0.0], [-1.0, 0.0]])
        sol = solve(QpProblem(np.eye(2), np.zeros(2), C=C, d=[1.0, 0.0]))
        assert sol.status == "infeasible"

    def test_active_bound_multiplier(self):
        sol = solve(QpProblem(np.eye(1), [0.0], C=[[1.0]], d=[1.0]))
        assert sol.x == pytest.approx([1.0])
        assert sol.mu == pytest.approx([1.0])
        assert sol.active == [0]

    def test_degenerate_duplicate_constraints(self):
        C = np.array([[1.0, 0.0]] * 5 + [[0.0, 1.0]] * 5)
        sol = solve(QpProblem(np.eye(2), np.zeros(2), C=C, d=np.ones(10)))
        assert sol.status == "optimal"
        assert np.allclose(sol.x, [1.0, 1.0])

    def test_rejects_indefinite(self):
        with pytest.raises(QpError):
            solve(QpProblem(np.diag([1.0, -1.0]), np.zeros(2)))

    def test_rejects_bad_shapes(self):
        with pytest.raises(QpError):
            QpProblem(np.eye(2), np.zeros(3))
        with pytest.raises(QpError):
            QpProblem(np.eye(2), np.zeros(2), A=[[1.0, 0.0]], b=[1.0, 2.0])
        with pytest.raises(QpError):
            QpProblem(np.array([[1.0, 2.0], [0.0, 1.0]]), np.zeros(2))
