"""Regularized, epsilon-insensitive convex quantile regression.

The fit minimizes

    1/2 sum_i ||beta_i||^2 + C sum_i (tau*xi_i + (1-tau)*xi*_i)

subject to the epsilon-insensitive residual bands and the pairwise
convexity constraints ``theta_i + beta_i'(x_j - x_i) <= theta_j``. Only
the convexity pairs found violated by the separation oracle are ever
instantiated.
"""

from __future__ import annotations

import logging
import time
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import kernels
from .qp import INF, InteriorPointSolver, IpmSettings, QpProblem, QpSolution, QpStatus, solve_qp
from .types import (
    CqrModel,
    Dataset,
    ParameterError,
    QuantileConfig,
    SolveReport,
    SolverError,
    SupportVector,
    Termination,
)

log = logging.getLogger(__name__)

SLACK_POSITIVE = 1e-8
_ROUND_IPM = IpmSettings(polish=False)
_DENSE_W_MAX = 1_000_000


class ConstraintPool:
    """Ordered set of instantiated convexity pairs ``(i, j)``, ``i != j``."""

    def __init__(self, n: int, pairs: Sequence[Tuple[int, int]] = ()):
        self.n = n
        self._order: List[Tuple[int, int]] = []
        self._set = set()
        self.add(pairs)

    def add(self, pairs) -> int:
        added = 0
        for i, j in pairs:
            i, j = int(i), int(j)
            if i == j or not (0 <= i < self.n and 0 <= j < self.n):
                raise ParameterError(f"invalid convexity pair {(i, j)}")
            if (i, j) not in self._set:
                self._set.add((i, j))
                self._order.append((i, j))
                added += 1
        return added

    def __contains__(self, pair) -> bool:
        return tuple(pair) in self._set

    def __len__(self) -> int:
        return len(self._order)

    def __iter__(self):
        return iter(self._order)

    @property
    def pairs(self) -> List[Tuple[int, int]]:
        return list(self._order)

    def arrays(self):
        if not self._order:
            e = np.zeros(0, dtype=np.int64)
            return e, e
        a = np.asarray(self._order, dtype=np.int64)
        return a[:, 0], a[:, 1]


def _active_columns(d: int, mask: Optional[SupportVector]) -> np.ndarray:
    if mask is None:
        return np.arange(d)
    if mask.d != d:
        raise ParameterError(f"mask has length {mask.d}, data has d={d}")
    return np.flatnonzero(mask.z)


class _CqrQp:
    """Incrementally assembled QP of the reduced master problem."""

    def __init__(self, Xa: np.ndarray, y: np.ndarray, cfg: QuantileConfig):
        self.Xa = Xa
        self.y = y
        self.cfg = cfg
        n, da = Xa.shape
        self.n, self.da = n, da
        self.nvar = n * (3 + da)
        self.o_beta = n
        self.o_xi = n + n * da
        self.o_xs = self.o_xi + n
        tau, C, eps = cfg.tau, cfg.C, cfg.epsilon
        diag = np.zeros(self.nvar)
        if cfg.regularized:
            diag[self.o_beta:self.o_xi] = 1.0
        self.P = sp.diags(diag, format="csc")
        q = np.zeros(self.nvar)
        q[self.o_xi:self.o_xs] = C * tau
        q[self.o_xs:] = C * (1.0 - tau)
        self.q = q
        idx = np.arange(n)
        rows = np.concatenate([idx, idx, n + idx, n + idx, 2 * n + idx, 3 * n + idx])
        cols = np.concatenate([idx, self.o_xi + idx, idx, self.o_xs + idx, self.o_xi + idx, self.o_xs + idx])
        vals = np.concatenate([np.ones(n), np.ones(n), np.ones(n), -np.ones(n), np.ones(n), np.ones(n)])
        self.base = sp.csr_matrix((vals, (rows, cols)), shape=(4 * n, self.nvar))
        self.base_l = np.concatenate([y - (1.0 - tau) * eps, np.full(n, -INF), np.zeros(2 * n)])
        self.base_u = np.concatenate([np.full(n, INF), y + tau * eps, np.full(2 * n, INF)])
        self.blocks = []
        self._I = []
        self._J = []
        self._V = []

    def add_pairs(self, I: np.ndarray, J: np.ndarray):
        if I.size == 0:
            return
        m = I.size
        da = self.da
        diff = self.Xa[J] - self.Xa[I]
        r = np.arange(m)
        rows = np.concatenate([r, r, np.repeat(r, da)])
        cols = np.concatenate([I, J, (self.o_beta + I[:, None] * da + np.arange(da)[None, :]).ravel()])
        vals = np.concatenate([np.ones(m), -np.ones(m), diff.ravel()])
        self.blocks.append(sp.csr_matrix((vals, (rows, cols)), shape=(m, self.nvar)))
        self._I.append(I)
        self._J.append(J)
        self._V.append(diff)

    def normal_solver(self):
        """Structured solver for the interior-point normal equations.

        The slack and slope blocks only couple to intercepts, so they are
        eliminated blockwise; what remains is a dense system in the n
        intercepts.
        """
        n, da = self.n, self.da
        if self._I:
            I = np.concatenate(self._I)
            J = np.concatenate(self._J)
            V = np.concatenate(self._V)
        else:
            I = J = np.zeros(0, dtype=np.int64)
            V = np.zeros((0, da))
        p_beta = 1.0 if self.cfg.regularized else 0.0
        o_b, o_x, o_s = self.o_beta, self.o_xi, self.o_xs
        npair = I.size
        flat_ij = np.concatenate([I * n + J, J * n + I])
        diag_idx = np.arange(n) * (n + 1)
        if da:
            order = np.argsort(I, kind="stable")
            Is, Js, Vs = I[order], J[order], V[order]
            cnt = np.bincount(Is, minlength=n)
            ncol = cnt + 1
            starts = np.concatenate([[0], np.cumsum(ncol)[:-1]])
            first_pair = np.concatenate([[0], np.cumsum(cnt)[:-1]])
            pos_pair = starts[Is] + 1 + (np.arange(npair) - first_pair[Is])
            cols_flat = np.empty(int(ncol.sum()), dtype=np.int64)
            cols_flat[starts] = np.arange(n)
            cols_flat[pos_pair] = Js
            # CSR layout of W: row i*da + a lists block i's columns in order
            blk = np.repeat(np.arange(n), ncol)
            within = np.arange(cols_flat.size) - starts[blk]
            a_idx = np.arange(da)
            row_of = blk[None, :] * da + a_idx[:, None]
            pos = (starts[blk] * da)[None, :] + a_idx[:, None] * ncol[blk][None, :] + within[None, :]
            perm = np.empty(da * cols_flat.size, dtype=np.int64)
            perm[pos.ravel()] = np.arange(da * cols_flat.size)
            indices = cols_flat[np.argsort(pos.ravel(), kind="stable") % cols_flat.size]
            indptr = np.concatenate([[0], np.cumsum(np.repeat(ncol, da))])
            VV = Vs[:, :, None] * Vs[:, None, :]
            has = cnt > 0
            grp = first_pair[has]
            eye = np.eye(da)
            # small instances multiply a dense W; sparse products cost more there
            dense_w = n * n * da <= _DENSE_W_MAX
            if dense_w:
                rows_d = (blk * da)[None, :] + a_idx[:, None]
                cols_d = np.broadcast_to(cols_flat[None, :], rows_d.shape)

        def factor(sig, reg):
            s1, s2 = sig[:n], sig[n:2 * n]
            s3, s4 = sig[2 * n:3 * n], sig[3 * n:4 * n]
            sp_ = sig[4 * n:4 * n + npair]
            dxi = s1 + s3 + reg
            dxs = s2 + s4 + reg
            diag = s1 + s2 + reg - s1 * s1 / dxi - s2 * s2 / dxs
            diag = diag + np.bincount(I, sp_, minlength=n) + np.bincount(J, sp_, minlength=n)
            S = -np.bincount(flat_ij, np.concatenate([sp_, sp_]), minlength=n * n).astype(float)
            S[diag_idx] += diag
            S = S.reshape(n, n)
            Linv = W = None
            if da:
                ss = sp_[order]
                B = np.broadcast_to((p_beta + reg) * eye, (n, da, da)).copy()
                U = ss[:, None] * Vs
                c = np.zeros((n, da))
                if npair:
                    B[has] += np.add.reduceat(ss[:, None, None] * VV, grp, axis=0)
                    c[has] = np.add.reduceat(U, grp, axis=0)
                L = np.linalg.cholesky(B)
                Linv = np.linalg.inv(L)
                vals = np.empty((da, cols_flat.size))
                vals[:, starts] = np.einsum("ide,ie->di", Linv, c)
                vals[:, pos_pair] = -np.einsum("pde,pe->dp", Linv[Is], U)
                if dense_w:
                    W = np.zeros((n * da, n))
                    W[rows_d, cols_d] = vals
                    S -= W.T @ W
                else:
                    W = sp.csr_matrix((vals.ravel()[perm], indices, indptr), shape=(n * da, n))
                    S -= (W.T @ W).toarray()
            cf = None
            for _ in range(6):
                try:
                    cf = sla.cho_factor(S, lower=True, check_finite=False)
                    break
                except np.linalg.LinAlgError:
                    S[np.diag_indices(n)] += max(reg, 1e-12) * 100.0
                    reg *= 100.0
            if cf is None:
                raise np.linalg.LinAlgError("intercept system is singular")

            def solve(r):
                r_x = r[o_x:o_s]
                r_s = r[o_s:]
                rhs = r[:n] - s1 * r_x / dxi + s2 * r_s / dxs
                if da:
                    t = np.einsum("ide,ie->id", Linv, r[o_b:o_x].reshape(n, da)).ravel()
                    rhs = rhs - W.T @ t
                a_t = sla.cho_solve(cf, rhs, check_finite=False)
                out = np.empty_like(r)
                out[:n] = a_t
                if da:
                    tt = (t - W @ a_t).reshape(n, da)
                    out[o_b:o_x] = np.einsum("ied,ie->id", Linv, tt).ravel()
                out[o_x:o_s] = (r_x - s1 * a_t) / dxi
                out[o_s:] = (r_s + s2 * a_t) / dxs
                return out

            return solve

        return factor

    @property
    def n_pairs(self) -> int:
        return sum(b.shape[0] for b in self.blocks)

    def problem(self) -> QpProblem:
        A = sp.vstack([self.base] + self.blocks, format="csc")
        npair = self.n_pairs
        l = np.concatenate([self.base_l, np.full(npair, -INF)])
        u = np.concatenate([self.base_u, np.zeros(npair)])
        return QpProblem(self.P, self.q, A, l, u)

    def unpack(self, x):
        n, da = self.n, self.da
        theta = x[:n]
        beta = x[self.o_beta:self.o_xi].reshape(n, da)
        xi = x[self.o_xi:self.o_xs]
        xs = x[self.o_xs:]
        return theta, beta, xi, xs

    def objective(self, x) -> float:
        theta, beta, xi, xs = self.unpack(x)
        cfg = self.cfg
        reg = 0.5 * float(np.sum(beta * beta)) if cfg.regularized else 0.0
        return reg + cfg.C * float(cfg.tau * xi.sum() + (1.0 - cfg.tau) * xs.sum())


def separate(theta, beta, data_or_X, tol: float) -> List[Tuple[int, int, float]]:
    """Most violated convexity pair for every observation.

    For each ``i`` the partner ``j(i)`` maximizes
    ``theta_i + beta_i'(x_k - x_i) - theta_k`` (first index on ties); pairs
    with violation above ``tol`` are returned as ``(i, j, violation)``.
    """
    X = data_or_X.X if isinstance(data_or_X, Dataset) else np.asarray(data_or_X, dtype=float)
    theta = np.asarray(theta, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if beta.ndim == 1:
        beta = beta.reshape(-1, 1)
    if theta.shape[0] != X.shape[0] or beta.shape != X.shape:
        raise ParameterError("theta/beta dimensions do not match the data")
    cols = np.flatnonzero(np.any(beta != 0.0, axis=0))
    if cols.size == 0:
        j, v = _const_argmax(theta)
    else:
        j, v = kernels.separation_argmax(X[:, cols], theta, beta[:, cols])
    # the self pair is zero exactly; the kernel may return roundoff there
    hit = np.flatnonzero((v > tol) & (j != np.arange(j.shape[0])))
    return [(int(i), int(j[i]), float(v[i])) for i in hit]


def _const_argmax(theta):
    k = int(np.argmin(theta))
    j = np.full(theta.shape[0], k, dtype=np.int64)
    return j, theta - theta[k]


def _knn_pairs(Xa: np.ndarray, per_row: int = 2) -> List[Tuple[int, int]]:
    n = Xa.shape[0]
    if Xa.shape[1] == 0 or n < 2:
        return []
    G = Xa @ Xa.T
    sq = np.diag(G)
    D = sq[:, None] + sq[None, :] - 2 * G
    np.fill_diagonal(D, np.inf)
    kk = min(per_row, n - 1)
    nn = np.argsort(D, axis=1, kind="stable")[:, :kk]
    return [(i, int(j)) for i in range(n) for j in nn[i]]


def fit_cqr(
    data: Dataset,
    cfg: QuantileConfig,
    mask: Optional[SupportVector] = None,
    initial_pairs: Sequence[Tuple[int, int]] = (),
    time_limit: Optional[float] = None,
) -> Tuple[CqrModel, SolveReport]:
    """Fit the regularized CQR model by delayed constraint generation.

    Columns with ``mask.z[j] == 0`` are excluded from the subgradients.
    Each round solves the reduced master, adds the most violated pair for
    every observation, and stops once no violation exceeds ``cfg.tol``.
    """
    t0 = time.perf_counter()
    n, d = data.X.shape
    cols = _active_columns(d, mask)
    Xa = data.X[:, cols]
    qp = _CqrQp(Xa, data.y, cfg)
    pool = ConstraintPool(n, initial_pairs)
    if cfg.initial_pool == "knn" and not initial_pairs:
        pool.add(_knn_pairs(Xa))
    I, J = pool.arrays()
    qp.add_pairs(I, J)

    x_prev = None
    y_prev = None
    trace: List[float] = []
    termination = Termination.ITER_LIMIT
    iterations = 0
    theta = beta_a = xi = xs = dual = None
    for it in range(int(cfg.max_cp_iters)):
        iterations = it + 1
        prob = qp.problem()
        y0 = None
        if y_prev is not None:
            y0 = np.concatenate([y_prev, np.zeros(prob.n_con - y_prev.size)])
        if cfg.qp_method == "ipm":
            # polishing is deferred to the round that passes separation
            ipm = InteriorPointSolver(prob, _ROUND_IPM, normal=qp.normal_solver())
            sol = ipm.solve(eps=cfg.qp_eps, max_iters=min(cfg.qp_max_iters, _ROUND_IPM.max_iters))
        else:
            ipm = None
            sol = solve_qp(prob, eps=cfg.qp_eps, max_iters=cfg.qp_max_iters, x0=x_prev, y0=y0, method="admm")
        if sol.status in (QpStatus.INFEASIBLE, QpStatus.UNBOUNDED):
            raise SolverError(f"reduced master QP returned {sol.status.value}", sol.status.value)
        if sol.status is QpStatus.MAX_ITERS:
            worst = max(sol.primal_residual, sol.dual_residual)
            if worst > 1e3 * cfg.qp_eps:
                raise SolverError(
                    f"reduced master QP stalled with residual {worst:.2e}", sol.status.value
                )
            log.warning("reduced master QP hit its iteration cap (residual %.2e)", worst)
        x_prev, y_prev = sol.x, sol.dual
        dual = sol.dual
        theta, beta_a, xi, xs = qp.unpack(sol.x)
        trace.append(qp.objective(sol.x))
        if Xa.shape[1]:
            j, v = kernels.separation_argmax(Xa, theta, beta_a)
        else:
            j, v = _const_argmax(theta)
        hit = np.flatnonzero(v > cfg.tol)
        new = [(int(i), int(j[i])) for i in hit if (int(i), int(j[i])) not in pool]
        if not new:
            termination = Termination.CONVERGED
            if ipm is not None:
                sol = _polished(ipm, sol, cfg.qp_eps)
                dual = sol.dual
                theta, beta_a, xi, xs = qp.unpack(sol.x)
                trace[-1] = qp.objective(sol.x)
            break
        if time_limit is not None and time.perf_counter() - t0 > time_limit:
            termination = Termination.TIME_LIMIT
            break
        pool.add(new)
        arr = np.asarray(new, dtype=np.int64)
        qp.add_pairs(arr[:, 0], arr[:, 1])

    beta = np.zeros((n, d))
    beta[:, cols] = beta_a
    npair = len(pool)
    ypair = dual[4 * n:4 * n + npair]
    mu = {}
    for (pi, pj), val in zip(pool, ypair):
        mu[(pi, pj)] = max(float(val), 0.0)
    lam = np.clip(-dual[:n], 0.0, None)
    lam_star = np.clip(dual[n:2 * n], 0.0, None)
    xi = np.maximum(xi, 0.0)
    xs = np.maximum(xs, 0.0)
    support = np.zeros(d, dtype=np.int8)
    support[cols] = 1
    model = CqrModel(
        theta=theta.copy(),
        beta=beta,
        xi=xi.copy(),
        xi_star=xs.copy(),
        anchors=data.X,
        objective=trace[-1],
        mu=mu,
        lam=lam,
        lam_star=lam_star,
        tau=cfg.tau,
        support=support,
    )
    infeas = primal_infeasibility(model, data)
    report = SolveReport(
        iterations=iterations,
        wall_time=time.perf_counter() - t0,
        objective=trace[-1],
        primal_infeasibility=infeas,
        termination=termination,
        objective_trace=tuple(trace),
        n_constraints=npair,
    )
    return model, report


def _polished(ipm: InteriorPointSolver, sol: QpSolution, eps: float) -> QpSolution:
    x, y, ok = ipm.polish(sol.x, sol.dual, eps)
    if not ok:
        return sol
    prim, dres, _ = ipm.prob.residuals(x, y)
    return QpSolution(x, y, ipm.prob.objective(x), prim, dres, QpStatus.OPTIMAL, sol.iterations, polished=True)


def predict(model: CqrModel, x) -> np.ndarray:
    """Evaluate the max-affine function ``max_i theta_i + beta_i'(x - x_i)``.

    Accepts one point (length d) or a matrix of points; returns a float for
    a single point.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    Xq = np.atleast_2d(x)
    if Xq.shape[1] != model.d:
        raise ParameterError(f"query has {Xq.shape[1]} features, model expects {model.d}")
    offset = model.theta - np.einsum("ij,ij->i", model.beta, model.anchors)
    vals = Xq @ model.beta.T + offset[None, :]
    out = vals.max(axis=1)
    return float(out[0]) if single else out


def primal_infeasibility(model: CqrModel, data: Dataset) -> float:
    """``(1/n) * ||V||_F`` over all ordered pairs of convexity violations."""
    if model.n != data.n or model.d != data.d:
        raise ParameterError("model dimensions do not match the data")
    cols = np.flatnonzero(np.any(model.beta != 0.0, axis=0))
    if cols.size == 0:
        diff = model.theta[:, None] - model.theta[None, :]
        s = float(np.sum(np.maximum(diff, 0.0) ** 2))
    else:
        s = kernels.violation_sumsq(data.X[:, cols], model.theta, model.beta[:, cols])
    return float(np.sqrt(s) / data.n)


def quantile_property_check(model: CqrModel, tau: float) -> Tuple[int, int, bool]:
    """Counts of strictly positive slacks and whether the quantile bounds hold."""
    n = model.n
    n_minus = int(np.sum(model.xi_star > SLACK_POSITIVE))
    n_plus = int(np.sum(model.xi > SLACK_POSITIVE))
    holds = n_minus / n <= tau + 1e-9 and n_plus / n <= 1.0 - tau + 1e-9
    return n_minus, n_plus, bool(holds)
