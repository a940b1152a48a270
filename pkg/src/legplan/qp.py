"""Dense convex QP: minimise 0.5 x'Hx + g'x  s.t.  Ax = b,  Cx >= d.

Primal active-set method. A feasible starting point comes from the
equality-constrained minimiser when that is feasible, otherwise from an LP
(scipy HiGHS), which also certifies infeasibility. Each iteration solves the
equality-constrained subproblem on the working set through its KKT system.
Singular H is handled by a tiny Tikhonov term during the iterations; the
final working set is then re-solved with the exact H.

Multiplier convention: H x + g = A' lam + C' mu with mu >= 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog


class QpError(ValueError):
    pass


@dataclass
class QpProblem:
    H: np.ndarray
    g: np.ndarray
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    C: np.ndarray | None = None
    d: np.ndarray | None = None

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.g = np.asarray(self.g, dtype=float).ravel()
        n = self.g.size
        if self.H.shape != (n, n):
            raise QpError("H must be n x n")
        if not np.allclose(self.H, self.H.T, rtol=0, atol=1e-12 * max(1.0, np.abs(self.H).max(initial=0))):
            raise QpError("H must be symmetric")
        self.A, self.b = self._rows(self.A, self.b, n, "A")
        self.C, self.d = self._rows(self.C, self.d, n, "C")

    @staticmethod
    def _rows(M, v, n, name):
        if M is None:
            return np.zeros((0, n)), np.zeros(0)
        M = np.asarray(M, dtype=float).reshape(-1, n)
        v = np.asarray(v, dtype=float).ravel()
        if v.size != M.shape[0]:
            raise QpError(f"{name} and its right-hand side disagree in size")
        return M, v

    @property
    def n(self) -> int:
        return self.g.size

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.H @ x + self.g @ x)


@dataclass
class QpSolution:
    x: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    status: str  # "optimal" | "infeasible" | "max_iter"
    objective: float
    stationarity: float = np.inf
    primal: float = np.inf
    complementarity: float = np.inf
    iterations: int = 0
    regularized: bool = False
    active: list[int] = field(default_factory=list)


REG = 1e-10


def kkt_residuals(p: QpProblem, x, lam, mu) -> tuple[float, float, float]:
    """(stationarity, primal infeasibility, complementarity) in the inf-norm."""
    r = p.H @ x + p.g - p.A.T @ lam - p.C.T @ mu
    stat = float(np.abs(r).max(initial=0.0))
    eq = np.abs(p.A @ x - p.b).max(initial=0.0)
    slack = p.C @ x - p.d
    ineq = np.maximum(-slack, 0.0).max(initial=0.0)
    prim = float(max(eq, ineq, np.maximum(-mu, 0.0).max(initial=0.0)))
    comp = float(np.abs(mu * slack).max(initial=0.0))
    return stat, prim, comp


def _reduce_equalities(A, b, tol):
    """Orthonormal rows spanning A's row space; None when Ax = b is inconsistent."""
    if A.shape[0] == 0:
        return A, b, np.zeros((0, 0))
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    r = int(np.sum(s > s[0] * 1e-12)) if s.size and s[0] > 0 else 0
    Ur, sr = U[:, :r], s[:r]
    b_red = (Ur.T @ b) / sr
    # consistency: b must lie in the column space of A
    if np.abs(Ur @ (Ur.T @ b) - b).max(initial=0.0) > tol * max(1.0, np.abs(b).max()):
        return None
    # lam_original = T @ lam_reduced
    return Vt[:r], b_red, Ur / sr


def _working_hessian(H, Ae):
    """H itself when it is positive definite on the equality null space.

    Otherwise every working-set KKT system could be singular, so a Tikhonov
    term is added. Returns ``(H_used, regularized)``.
    """
    n = H.shape[0]
    scale = max(1.0, np.abs(H).max(initial=0.0))
    evals = np.linalg.eigvalsh(H)
    if evals.size and evals[0] < -1e-8 * scale:
        raise QpError("H is not positive semidefinite")
    if evals.size == 0 or evals[0] > 1e-12 * scale:
        return H, False
    if Ae.shape[0]:
        # rows of Ae are orthonormal; the remaining right singular vectors span its null space
        Z = np.linalg.svd(Ae, full_matrices=True)[2][Ae.shape[0]:].T
    else:
        Z = np.eye(n)
    if Z.shape[1] == 0 or np.linalg.eigvalsh(Z.T @ H @ Z)[0] > 1e-12 * scale:
        return H, False
    return H + REG * np.eye(n), True


def _kkt_solve(H, grad, M, resid=None):
    """Step p and multipliers nu with H p - M' nu = -grad, M p = -resid."""
    n, k = H.shape[0], M.shape[0]
    K = np.zeros((n + k, n + k))
    K[:n, :n] = H
    K[:n, n:] = -M.T
    K[n:, :n] = M
    rhs = np.concatenate([-grad, np.zeros(k) if resid is None else -resid])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[:n], sol[n:]


def _dependent(M, c) -> bool:
    """True when ``c`` lies (numerically) in the row space of ``M``."""
    if M.shape[0] == 0:
        return False
    y = np.linalg.lstsq(M.T, c, rcond=None)[0]
    return np.linalg.norm(M.T @ y - c) <= 1e-10 * np.linalg.norm(c)


def _most_violated(C, d, x, work, M, ctol):
    if C.shape[0] == 0:
        return None
    slack = C @ x - d
    slack[work] = np.inf
    for j in np.argsort(slack, kind="stable"):
        if slack[j] >= -ctol:
            return None
        if not _dependent(M, C[j]):
            return int(j)
    return None


def _phase_one(A, b, C, d, n):
    res = linprog(
        np.zeros(n),
        A_ub=-C if C.shape[0] else None,
        b_ub=-d if C.shape[0] else None,
        A_eq=A if A.shape[0] else None,
        b_eq=b if A.shape[0] else None,
        bounds=[(None, None)] * n,
        method="highs",
    )
    if res.status == 2:
        return None
    if res.status != 0:
        raise QpError(f"phase-one LP failed: {res.message}")
    return res.x


def solve(p: QpProblem, tol: float = 1e-9, max_iter: int | None = None) -> QpSolution:
    n = p.n
    max_iter = max_iter if max_iter is not None else 10 * (n + p.C.shape[0]) + 50
    H = p.H
    regularized = False

    def fail(status, x=None):
        x = np.zeros(n) if x is None else x
        return QpSolution(x, np.zeros(p.A.shape[0]), np.zeros(p.C.shape[0]), status,
                          p.objective(x), regularized=regularized)

    red = _reduce_equalities(p.A, p.b, tol)
    if red is None:
        return fail("infeasible")
    Ae, be, lam_map = red
    Hw, regularized = _working_hessian(H, Ae)
    C, d = p.C, p.d
    ctol = tol * max(1.0, np.abs(d).max(initial=0.0))

    # starting point: equality-constrained minimiser if it is feasible
    x0 = Ae.T @ be
    step, _ = _kkt_solve(Hw, Hw @ x0 + p.g, Ae)
    x = x0 + step
    if C.shape[0] and np.any(C @ x - d < -ctol):
        x = _phase_one(p.A, p.b, C, d, n)
        if x is None:
            return fail("infeasible")

    work: list[int] = []
    status = "max_iter"
    it = 0
    nu = np.zeros(Ae.shape[0])
    at_min = False  # x already minimises over the current working set
    row_norm = np.linalg.norm(C, axis=1) if C.shape[0] else np.zeros(0)
    while it < max_iter:
        it += 1
        M = np.vstack([Ae, C[work]]) if work else Ae
        target = np.concatenate([be, d[work]]) if work else be
        # the residual term pulls x back onto the working set, so round-off does not accumulate
        step, nu = _kkt_solve(Hw, Hw @ x + p.g, M, M @ x - target)
        if at_min or np.abs(step).max(initial=0.0) <= 1e-12 * max(1.0, np.abs(x).max(initial=0.0)):
            if at_min:
                x = x + step  # absorb the round-off sized correction
            mu_w = nu[Ae.shape[0]:]
            if mu_w.size == 0 or mu_w.min() >= -tol:
                j = _most_violated(C, d, x, work, M, ctol)
                if j is None:
                    status = "optimal"
                    break
                work.append(j)
                at_min = False
                continue
            work.pop(int(np.argmin(mu_w)))
            at_min = False
            continue
        alpha, block = 1.0, None
        if C.shape[0]:
            cp = C @ step
            slack = C @ x - d
            # directions nearly parallel to a constraint are round-off, not blocking
            cand = np.where(cp < -1e-12 * row_norm * np.linalg.norm(step))[0]
            cand = cand[~np.isin(cand, work)]
            if cand.size:
                ratios = np.maximum(slack[cand], 0.0) / -cp[cand]
                for k in np.argsort(ratios, kind="stable"):
                    if ratios[k] >= alpha:
                        break
                    if not _dependent(M, C[cand[k]]):
                        alpha, block = float(ratios[k]), int(cand[k])
                        break
        x = x + alpha * step
        if block is not None:
            work.append(block)
        at_min = block is None

    x, lam, mu = _finish(p, H, x, work, Ae, lam_map, nu, regularized, ctol)
    stat, prim, comp = kkt_residuals(p, x, lam, mu)
    return QpSolution(x, lam, mu, status, p.objective(x), stat, prim, comp, it, regularized, sorted(work))


def _finish(p, H, x, work, Ae, lam_map, nu, regularized, ctol):
    """Recover multipliers for the original constraints, re-solving with exact H."""
    n = p.n
    C, d = p.C, p.d
    ne = Ae.shape[0]
    M = np.vstack([Ae, C[work]]) if work else Ae
    if regularized:
        # re-solve the working-set system with the unregularised Hessian
        rhs_b = np.concatenate([Ae @ x, d[work]]) if work else Ae @ x
        K = np.block([[H, -M.T], [M, np.zeros((M.shape[0], M.shape[0]))]])
        rhs = np.concatenate([-p.g, rhs_b])
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        xe, nue = sol[:n], sol[n:]
        if np.all(C @ xe - d >= -ctol) and (nue[ne:].size == 0 or nue[ne:].min() >= -1e-9):
            x, nu = xe, nue
    else:
        # one step of iterative refinement on the multipliers
        nu = np.linalg.lstsq(M.T, H @ x + p.g, rcond=None)[0] if M.shape[0] else nu
    lam = lam_map @ nu[:ne] if ne else np.zeros(p.A.shape[0])
    mu = np.zeros(C.shape[0])
    if work:
        mu[work] = np.maximum(nu[ne:], 0.0)
    return x, lam, mu
