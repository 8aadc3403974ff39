import itertools

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from scqr.qp import INF, QpProblem, QpStatus, solve_lp, solve_qp
from scqr.types import ParameterError

METHODS = ["admm", "ipm"]


def kkt_residuals(prob, x, y):
    """Stationarity, feasibility and complementarity computed from scratch."""
    P, A = prob.P.toarray(), prob.A.toarray()
    stat = np.abs(P @ x + prob.q + A.T @ y).max(initial=0.0)
    Ax = A @ x
    feas = max(np.maximum(prob.l - Ax, 0).max(initial=0.0), np.maximum(Ax - prob.u, 0).max(initial=0.0))
    comp = 0.0
    for i in range(A.shape[0]):
        if y[i] > 0:
            comp = max(comp, y[i] * abs(prob.u[i] - Ax[i]) if prob.u[i] < INF else y[i])
        elif y[i] < 0:
            comp = max(comp, -y[i] * abs(Ax[i] - prob.l[i]) if prob.l[i] > -INF else -y[i])
    return stat, feas, comp


def dual_value(prob, x, y):
    """QP dual objective under the convention ``Px + q + A'y = 0``."""
    yp, ym = np.maximum(y, 0), np.maximum(-y, 0)
    u = np.where(prob.u < INF, prob.u, 0.0)
    l = np.where(prob.l > -INF, prob.l, 0.0)
    return -0.5 * x @ (prob.P @ x) - u @ yp + l @ ym


def random_qp(seed, m=20, rows=10):
    r = np.random.default_rng(seed)
    M = r.standard_normal((m, m))
    P = M @ M.T / m + 0.1 * np.eye(m)
    q = r.standard_normal(m)
    A = r.standard_normal((rows, m))
    center = r.standard_normal(m) * 0.1
    Ac = A @ center
    l = Ac - r.uniform(0.1, 1.0, rows)
    u = Ac + r.uniform(0.1, 1.0, rows)
    return QpProblem(P, q, A, l, u)


class TestProblem:
    def test_asymmetric_P(self):
        with pytest.raises(ParameterError):
            QpProblem(np.array([[1.0, 1.0], [0.0, 1.0]]), [0, 0], np.eye(2), [0, 0], [1, 1])

    def test_bounds_order(self):
        with pytest.raises(ParameterError):
            QpProblem(np.eye(1), [0.0], np.eye(1), [1.0], [0.0])

    def test_shapes(self):
        with pytest.raises(ParameterError):
            QpProblem(np.eye(2), [0.0], np.eye(2), [0, 0], [1, 1])


@pytest.mark.parametrize("method", METHODS)
class TestSolveQp:
    def test_lower_bound(self, method):
        sol = solve_qp(QpProblem(np.eye(1), [0.0], np.ones((1, 1)), [1.0], [INF]), method=method)
        assert sol.status is QpStatus.OPTIMAL
        assert sol.x[0] == pytest.approx(1.0, abs=1e-6)
        assert sol.objective == pytest.approx(0.5, abs=1e-6)
        # active lower bound: multiplier of magnitude 1 with sign <= 0
        assert sol.dual[0] == pytest.approx(-1.0, abs=1e-6)

    def test_unconstrained(self, method):
        sol = solve_qp(QpProblem(np.eye(1), [-1.0], np.zeros((0, 1)), [], []), method=method)
        assert sol.x[0] == pytest.approx(1.0, abs=1e-6)
        assert sol.objective == pytest.approx(-0.5, abs=1e-6)

    def test_upper_row_sign(self, method):
        # min 1/2 (x - 2)^2 with x <= 1: active upper bound, multiplier +1
        sol = solve_qp(QpProblem(np.eye(1), [-2.0], np.ones((1, 1)), [-INF], [1.0]), method=method)
        assert sol.x[0] == pytest.approx(1.0, abs=1e-6)
        assert sol.dual[0] == pytest.approx(1.0, abs=1e-6)

    def test_equality_row(self, method):
        prob = QpProblem(np.eye(2), [0.0, 0.0], np.array([[1.0, 1.0]]), [1.0], [1.0])
        sol = solve_qp(prob, method=method)
        np.testing.assert_allclose(sol.x, [0.5, 0.5], atol=1e-6)

    def test_infeasible(self, method):
        prob = QpProblem(np.eye(1), [0.0], np.ones((2, 1)), [1.0, -INF], [INF, 0.0])
        sol = solve_qp(prob, method=method)
        assert sol.status is QpStatus.INFEASIBLE
        c = sol.certificate
        assert np.abs(prob.A.T @ c).max() <= 1e-6

    @pytest.mark.parametrize("seed", range(5))
    def test_random_kkt(self, method, seed):
        prob = random_qp(seed)
        sol = solve_qp(prob, eps=1e-8, method=method)
        assert sol.status is QpStatus.OPTIMAL
        stat, feas, comp = kkt_residuals(prob, sol.x, sol.dual)
        assert max(stat, feas, comp) <= 1e-6

    @pytest.mark.parametrize("seed", range(5))
    def test_strong_duality(self, method, seed):
        prob = random_qp(100 + seed)
        sol = solve_qp(prob, eps=1e-8, method=method)
        gap = abs(sol.objective - dual_value(prob, sol.x, sol.dual))
        assert gap <= 10 * 1e-6 * (1 + abs(sol.objective))

    @given(st.integers(0, 10**6), st.floats(0.1, 10.0))
    def test_scaling_equivariance(self, method, seed, scale):
        prob = random_qp(seed, m=6, rows=4)
        ref = solve_qp(prob, eps=1e-9, method=method)
        scaled = solve_qp(QpProblem(prob.P * scale, prob.q * scale, prob.A, prob.l, prob.u), eps=1e-9, method=method)
        assert scaled.objective == pytest.approx(scale * ref.objective, rel=1e-6, abs=1e-6)
        np.testing.assert_allclose(scaled.x, ref.x, atol=1e-6)

    @given(st.integers(0, 10**6))
    def test_adding_satisfied_row(self, method, seed):
        prob = random_qp(seed, m=6, rows=4)
        ref = solve_qp(prob, eps=1e-9, method=method)
        r = np.random.default_rng(seed)
        a = r.standard_normal(6)
        slack = a @ ref.x + 0.5
        A = sp.vstack([prob.A, sp.csr_matrix(a)])
        grown = QpProblem(prob.P, prob.q, A, np.append(prob.l, -INF), np.append(prob.u, slack))
        sol = solve_qp(grown, eps=1e-9, method=method)
        assert sol.objective == pytest.approx(ref.objective, abs=1e-7)


def test_routes_agree():
    for seed in range(5):
        prob = random_qp(200 + seed)
        a = solve_qp(prob, eps=1e-9, method="admm")
        b = solve_qp(prob, eps=1e-9, method="ipm")
        np.testing.assert_allclose(a.x, b.x, atol=1e-6)
        np.testing.assert_allclose(a.dual, b.dual, atol=1e-5)


def test_unknown_method():
    with pytest.raises(ParameterError):
        solve_qp(random_qp(0), method="simplex")


def _vertex_optimum(c, A, b):
    """Best basic feasible point of ``min c'x, Ax <= b, 0 <= x <= 1`` by enumeration."""
    m, n = A.shape
    best = np.inf
    for r in range(0, min(m, n) + 1):
        for rows in itertools.combinations(range(m), r):
            for free in itertools.combinations(range(n), r):
                fixed = [j for j in range(n) if j not in free]
                B = A[np.ix_(rows, free)]
                if r and abs(np.linalg.det(B)) < 1e-10:
                    continue
                for bits in itertools.product((0.0, 1.0), repeat=len(fixed)):
                    x = np.zeros(n)
                    x[fixed] = bits
                    if r:
                        x[list(free)] = np.linalg.solve(B, b[list(rows)] - A[np.ix_(rows, fixed)] @ x[fixed])
                    if np.all(A @ x <= b + 1e-9) and np.all(x >= -1e-9) and np.all(x <= 1 + 1e-9):
                        best = min(best, c @ x)
    return best


@pytest.mark.parametrize("method", METHODS)
class TestSolveLp:
    def test_triangle(self, method):
        A = np.array([[1.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
        sol = solve_lp([-1.0, -1.0], A, [-INF, 0, 0], [1, 1, 1], method=method)
        assert sol.objective == pytest.approx(-1.0, abs=1e-7)

    def test_single_bound(self, method):
        sol = solve_lp([1.0], np.ones((1, 1)), [-5.0], [INF], method=method)
        assert sol.x[0] == pytest.approx(-5.0, abs=1e-7)

    def test_unbounded(self, method):
        sol = solve_lp([1.0], np.ones((1, 1)), [-INF], [5.0], method=method)
        assert sol.status is QpStatus.UNBOUNDED
        assert sol.certificate[0] < 0

    @pytest.mark.parametrize("seed", range(3))
    def test_vertex_enumeration(self, method, seed):
        r = np.random.default_rng(seed)
        n, m = 8, 6
        A = r.standard_normal((m, n))
        b = A @ np.full(n, 0.5) + r.uniform(0.05, 0.5, m)
        c = r.standard_normal(n)
        AA = np.vstack([A, np.eye(n)])
        l = np.concatenate([np.full(m, -INF), np.zeros(n)])
        u = np.concatenate([b, np.ones(n)])
        sol = solve_lp(c, AA, l, u, eps=1e-9, method=method)
        assert sol.objective == pytest.approx(_vertex_optimum(c, A, b), abs=1e-7)
