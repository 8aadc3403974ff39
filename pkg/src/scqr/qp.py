"""Convex QP solver: operator splitting (ADMM) with active-set polishing.

Solves

    minimize    1/2 x'Px + q'x
    subject to  l <= Ax <= u

Equalities are rows with ``l == u``. Multipliers follow the convention
``Px + q + A'y = 0`` with ``y >= 0`` on rows active at their upper bound and
``y <= 0`` on rows active at their lower bound.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .types import ParameterError

log = logging.getLogger(__name__)

INF = 1e20
_DENSE_MAX_VARS = 600


class QpStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    MAX_ITERS = "MaxIters"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"


@dataclass(frozen=True)
class QpProblem:
    P: sp.csc_matrix
    q: np.ndarray
    A: sp.csc_matrix
    l: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        P = sp.csc_matrix(self.P, dtype=float)
        A = sp.csc_matrix(self.A, dtype=float)
        q = np.asarray(self.q, dtype=float).ravel()
        l = np.asarray(self.l, dtype=float).ravel()
        u = np.asarray(self.u, dtype=float).ravel()
        m = q.shape[0]
        if P.shape != (m, m):
            raise ParameterError(f"P has shape {P.shape}, expected {(m, m)}")
        if A.shape[1] != m:
            raise ParameterError(f"A has {A.shape[1]} columns, expected {m}")
        p = A.shape[0]
        if l.shape[0] != p or u.shape[0] != p:
            raise ParameterError("l and u must have one entry per row of A")
        if P.nnz and abs(P - P.T).max() > 1e-10:
            raise ParameterError("P must be symmetric")
        if np.any(l > u):
            raise ParameterError("l must not exceed u")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "l", np.maximum(l, -INF))
        object.__setattr__(self, "u", np.minimum(u, INF))

    @property
    def n_var(self) -> int:
        return self.q.shape[0]

    @property
    def n_con(self) -> int:
        return self.A.shape[0]

    def objective(self, x) -> float:
        return float(0.5 * x @ (self.P @ x) + self.q @ x)

    def residuals(self, x, y):
        """Return (primal, dual, complementarity) infinity-norm residuals."""
        Ax = self.A @ x
        prim = np.maximum(self.l - Ax, 0.0)
        prim = np.maximum(prim, Ax - self.u)
        dual = self.P @ x + self.q + self.A.T @ y
        yp = np.maximum(y, 0.0)
        ym = np.minimum(y, 0.0)
        gap_u = np.where(self.u < INF, self.u - Ax, 0.0)
        gap_l = np.where(self.l > -INF, Ax - self.l, 0.0)
        comp = np.concatenate([yp * np.abs(gap_u), -ym * np.abs(gap_l)])
        # a positive multiplier on a row without upper bound is itself a violation
        bad = np.concatenate([yp[self.u >= INF], -ym[self.l <= -INF]])
        comp = np.concatenate([comp, bad])
        nrm = lambda v: float(np.abs(v).max()) if v.size else 0.0
        return nrm(prim), nrm(dual), nrm(comp)


@dataclass(frozen=True)
class QpSolution:
    x: np.ndarray
    dual: np.ndarray
    objective: float
    primal_residual: float
    dual_residual: float
    status: QpStatus
    iterations: int = 0
    polished: bool = False
    certificate: Optional[np.ndarray] = None


@dataclass
class AdmmSettings:
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    scaling_iter: int = 10
    adapt_interval: int = 50
    check_interval: int = 10
    polish: bool = True
    polish_delta: float = 1e-8
    polish_refine: int = 6
    polish_rounds: int = 8
    polish_trigger: float = 1e-3
    polish_every: int = 50
    eps_infeas: float = 1e-6


def _recession_certificate(prob: "QpProblem", d, tol: float = 1e-6):
    """Normalized ``d`` if it is a descent ray of the feasible set, else None."""
    nd = _norm_inf(d)
    if not nd > 0 or not np.isfinite(nd):
        return None
    d = d / nd
    Ad = prob.A @ d
    if _norm_inf(prob.P @ d) > tol or float(prob.q @ d) >= -tol:
        return None
    if np.any(Ad[prob.u < INF] > tol) or np.any(Ad[prob.l > -INF] < -tol):
        return None
    return d


def _farkas_certificate(prob: "QpProblem", y, tol: float = 1e-6):
    """Normalized ``y`` if it proves ``l <= Ax <= u`` empty, else None."""
    ny = _norm_inf(y)
    if not ny > 0 or not np.isfinite(ny):
        return None
    y = y / ny
    yp, ym = np.maximum(y, 0.0), np.maximum(-y, 0.0)
    if np.any(yp[prob.u >= INF] > tol) or np.any(ym[prob.l <= -INF] > tol):
        return None
    if _norm_inf(prob.A.T @ y) > tol:
        return None
    uu = np.where(prob.u < INF, prob.u, 0.0)
    ll = np.where(prob.l > -INF, prob.l, 0.0)
    if float(uu @ yp - ll @ ym) >= -tol:
        return None
    return y


def _norm_inf(v) -> float:
    return float(np.abs(v).max()) if v.size else 0.0


def _col_inf_norm(M: sp.csc_matrix) -> np.ndarray:
    if M.nnz == 0:
        return np.zeros(M.shape[1])
    return np.asarray(abs(M).max(axis=0).todense()).ravel()


def _row_inf_norm(M: sp.csr_matrix) -> np.ndarray:
    if M.nnz == 0:
        return np.zeros(M.shape[0])
    return np.asarray(abs(M).max(axis=1).todense()).ravel()


class _Scaling:
    """Ruiz equilibration of the KKT matrix plus a cost scaling factor."""

    def __init__(self, prob: QpProblem, iters: int):
        n, m = prob.n_var, prob.n_con
        D = np.ones(n)
        E = np.ones(m)
        c = 1.0
        P = prob.P.copy()
        q = prob.q.copy()
        A = prob.A.copy()
        for _ in range(iters):
            ncol = np.maximum(_col_inf_norm(P), _col_inf_norm(A))
            ncol = np.where(ncol < 1e-4, 1.0, ncol)
            dt = 1.0 / np.sqrt(np.clip(ncol, 1e-4, 1e4))
            nrow = _row_inf_norm(A.tocsr())
            nrow = np.where(nrow < 1e-4, 1.0, nrow)
            et = 1.0 / np.sqrt(np.clip(nrow, 1e-4, 1e4))
            Dm = sp.diags(dt)
            P = (Dm @ P @ Dm).tocsc()
            A = (sp.diags(et) @ A @ Dm).tocsc()
            q = dt * q
            D *= dt
            E *= et
            pn = _col_inf_norm(P)
            scale = max(pn.mean() if pn.size else 0.0, _norm_inf(q))
            if scale < 1e-4:
                scale = 1.0
            ct = 1.0 / np.clip(scale, 1e-4, 1e4)
            P = P * ct
            q = q * ct
            c *= ct
        self.D, self.E, self.c = D, E, c
        self.P = P.tocsc()
        self.q = q
        self.A = A.tocsr()
        self.AT = A.T.tocsr()
        l = np.where(prob.l > -INF, prob.l * E, -INF)
        u = np.where(prob.u < INF, prob.u * E, INF)
        self.l, self.u = l, u


class _ReducedSystem:
    """Factorization of P + sigma*I + A' diag(rho) A."""

    def __init__(self, P, A, AT, sigma, rho_vec, dense: bool):
        n = P.shape[0]
        K = P + sigma * sp.identity(n, format="csc") + (AT @ sp.diags(rho_vec) @ A)
        self.dense = dense
        if dense:
            self._cho = sla.cho_factor(K.toarray(), lower=True, check_finite=False)
        else:
            self._lu = spla.splu(
                sp.csc_matrix(K),
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )

    def solve(self, rhs):
        if self.dense:
            return sla.cho_solve(self._cho, rhs, check_finite=False)
        return self._lu.solve(rhs)


def _kkt_factor(P, Aact, delta: float):
    n = P.shape[0]
    na = Aact.shape[0]
    K = sp.bmat(
        [
            [P + delta * sp.identity(n), Aact.T],
            [Aact, -delta * sp.identity(na)],
        ],
        format="csc",
    )
    f = spla.splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True})
    return f.solve


@dataclass(frozen=True)
class _Space:
    """Problem data in the coordinates a solver iterates in."""

    P: sp.csc_matrix
    q: np.ndarray
    A: sp.csr_matrix
    l: np.ndarray
    u: np.ndarray
    eq: np.ndarray


def _pdas_polish(space: _Space, prob: QpProblem, x0, z0, y0, eps, settings, unscale, first=None):
    """Solve the KKT system on the active set guessed from an iterate.

    The guess is refined by primal-dual active-set steps: a row is active
    at its upper bound when ``y + (Ax - u) > 0`` and at its lower bound when
    ``y + (Ax - l) < 0``. Returns ``(score, x, y)`` of the best candidate in
    original units, or None.
    """
    n = prob.n_var
    fin_l = space.l > -INF
    fin_u = space.u < INF
    x_cur, z_cur, y_cur = x0, z0, y0
    best = None
    seen = set()
    for rnd in range(settings.polish_rounds):
        if rnd == 0 and first is not None:
            up, low = first
        else:
            up = fin_u & (y_cur + (z_cur - space.u) > 0) & ~space.eq
            low = fin_l & (y_cur + (z_cur - space.l) < 0) & ~space.eq & ~up
        key = (np.packbits(up).tobytes(), np.packbits(low).tobytes())
        if key in seen:
            break
        seen.add(key)
        act = np.flatnonzero(low | up | space.eq)
        Aact = space.A[act]
        bact = np.where(up[act], space.u[act], space.l[act])
        try:
            solve = _kkt_factor(space.P, Aact, settings.polish_delta)
        except (RuntimeError, np.linalg.LinAlgError, ValueError):
            return best
        rhs = np.concatenate([-space.q, bact])
        sol = solve(rhs)
        for _ in range(settings.polish_refine):
            r1 = -space.q - (space.P @ sol[:n] + Aact.T @ sol[n:])
            r2 = bact - Aact @ sol[:n]
            res = np.concatenate([r1, r2])
            if _norm_inf(res) < 1e-14:
                break
            sol = sol + solve(res)
        if not np.all(np.isfinite(sol)) or _norm_inf(sol) > 1e12:
            return best
        xp = sol[:n]
        yp = np.zeros(prob.n_con)
        yp[act] = sol[n:]
        x, y = unscale(xp, yp)
        prim, dual, _ = prob.residuals(x, y)
        sign = max(_norm_inf(y[low & (y > 0)]), _norm_inf(y[up & (y < 0)]))
        score = max(prim, dual, sign)
        log.debug("polish: prim %.2e dual %.2e sign %.2e act %d", prim, dual, sign, act.size)
        if best is None or score < best[0]:
            best = (score, x, y)
        if score <= eps:
            return best
        x_cur, z_cur, y_cur = xp, space.A @ xp, yp
    return best


class AdmmSolver:
    """One-shot solver instance; not shareable across threads mid-solve."""

    def __init__(self, prob: QpProblem, settings: Optional[AdmmSettings] = None):
        self.prob = prob
        self.s = settings or AdmmSettings()
        self.sc = _Scaling(prob, self.s.scaling_iter)
        self.dense = prob.n_var <= _DENSE_MAX_VARS
        sc = self.sc
        self.eq = np.abs(sc.u - sc.l) < 1e-9 * np.maximum(1.0, np.abs(sc.u))
        self.free = (sc.l <= -INF) & (sc.u >= INF)
        self._set_rho(self.s.rho)

    def _set_rho(self, rho: float):
        rho = float(np.clip(rho, 1e-6, 1e6))
        self.rho = rho
        rv = np.full(self.prob.n_con, rho)
        rv[self.eq] = 1e3 * rho
        rv[self.free] = 1e-6
        self.rho_vec = rv
        sc = self.sc
        self.lin = _ReducedSystem(sc.P, sc.A, sc.AT, self.s.sigma, rv, self.dense)

    # ------------------------------------------------------------------ helpers
    def _unscale(self, xs, ys):
        sc = self.sc
        return sc.D * xs, sc.E * ys / sc.c

    def _unscaled_residuals(self, x, y):
        prim, dual, comp = self.prob.residuals(x, y)
        return prim, dual, comp

    def _polish(self, xs, zs, ys, eps):
        sc = self.sc
        space = _Space(sc.P, sc.q, sc.A, sc.l, sc.u, self.eq)
        return _pdas_polish(space, self.prob, xs, zs, ys, eps, self.s, self._unscale)

    # --------------------------------------------------------------------- main
    def solve(self, eps: float = 1e-6, max_iters: int = 20000, x0=None, y0=None) -> QpSolution:
        s = self.s
        sc = self.sc
        prob = self.prob
        n, m = prob.n_var, prob.n_con
        if x0 is not None:
            xs = np.asarray(x0, dtype=float) / sc.D
        else:
            xs = np.zeros(n)
        if y0 is not None:
            ys = np.asarray(y0, dtype=float) * sc.c / sc.E
        else:
            ys = np.zeros(m)
        zs = np.clip(sc.A @ xs, sc.l, sc.u)
        alpha = s.alpha
        sigma = s.sigma
        P, q, A, AT = sc.P, sc.q, sc.A, sc.AT
        lo, hi = sc.l, sc.u
        y_check = ys.copy()
        x_check = xs.copy()
        eps_admm = eps
        last_polish = -10 ** 9
        best = None
        it = 0
        ci = s.check_interval
        while it < max_iters:
            it += 1
            rho_vec = self.rho_vec
            rhs = sigma * xs - q + AT @ (rho_vec * zs - ys)
            xt = self.lin.solve(rhs)
            zt = A @ xt
            xs_new = alpha * xt + (1.0 - alpha) * xs
            zrel = alpha * zt + (1.0 - alpha) * zs
            z_new = np.clip(zrel + ys / rho_vec, lo, hi)
            ys = ys + rho_vec * (zrel - z_new)
            xs_prev = xs
            xs, zs = xs_new, z_new
            if it % ci and it != max_iters:
                continue
            # residuals in unscaled space
            Ax = A @ xs
            Px = P @ xs
            ATy = AT @ ys
            Einv = 1.0 / sc.E
            Dinv = 1.0 / sc.D
            r_prim = _norm_inf(Einv * (Ax - zs))
            r_dual = _norm_inf(Dinv * (Px + q + ATy)) / sc.c
            n_prim = max(_norm_inf(Einv * Ax), _norm_inf(Einv * zs))
            n_dual = max(_norm_inf(Dinv * Px), _norm_inf(Dinv * ATy), _norm_inf(Dinv * q)) / sc.c
            ok_prim = r_prim <= eps_admm + eps_admm * n_prim
            ok_dual = r_dual <= eps_admm + eps_admm * n_dual
            # infeasibility certificates
            dy = ys - y_check
            dx = xs - x_check
            y_check = ys.copy()
            x_check = xs.copy()
            if not (ok_prim and ok_dual):
                cert = self._primal_infeasible(dy)
                if cert is not None:
                    x, _ = self._unscale(xs, ys)
                    return QpSolution(x, cert, np.nan, r_prim, r_dual, QpStatus.INFEASIBLE, it, certificate=cert)
                cert = self._dual_infeasible(dx)
                if cert is not None:
                    x, y = self._unscale(xs, ys)
                    return QpSolution(x, y, -np.inf, r_prim, r_dual, QpStatus.UNBOUNDED, it, certificate=cert)
            converged = ok_prim and ok_dual
            trigger = r_prim <= s.polish_trigger * (1 + n_prim) and r_dual <= s.polish_trigger * (1 + n_dual)
            if s.polish and (converged or (trigger and it - last_polish >= s.polish_every)):
                last_polish = it
                res = self._polish(xs, zs, ys, eps)
                if res is not None and res[0] <= eps:
                    return self._finish(res[1], res[2], it, QpStatus.OPTIMAL, polished=True)
                if res is not None and (best is None or res[0] < best[0]):
                    best = res
            if converged:
                x, y = self._unscale(xs, ys)
                prim, dual, _ = self._unscaled_residuals(x, y)
                if max(prim, dual) <= eps:
                    return self._finish(x, y, it, QpStatus.OPTIMAL)
                eps_admm = max(eps_admm * 0.1, 1e-13)
            if it % s.adapt_interval == 0:
                denom_p = max(n_prim, 1e-12)
                denom_d = max(n_dual, 1e-12)
                ratio = np.sqrt((r_prim / denom_p) / max(r_dual / denom_d, 1e-30))
                if ratio > 5.0 or ratio < 0.2:
                    new_rho = self.rho * ratio
                    if abs(np.log(np.clip(new_rho, 1e-6, 1e6) / self.rho)) > 1e-3:
                        self._set_rho(new_rho)
        x, y = self._unscale(xs, ys)
        prim, dual, _ = self._unscaled_residuals(x, y)
        if best is not None and best[0] < max(prim, dual):
            x, y = best[1], best[2]
            prim, dual, _ = self._unscaled_residuals(x, y)
        status = QpStatus.OPTIMAL if max(prim, dual) <= eps else QpStatus.MAX_ITERS
        return self._finish(x, y, it, status)

    def _finish(self, x, y, it, status, polished=False) -> QpSolution:
        prim, dual, _ = self._unscaled_residuals(x, y)
        return QpSolution(
            x=x,
            dual=y,
            objective=self.prob.objective(x),
            primal_residual=prim,
            dual_residual=dual,
            status=status,
            iterations=it,
            polished=polished,
        )

    def _primal_infeasible(self, dy):
        sc = self.sc
        ny = _norm_inf(dy)
        if ny < 1e-12:
            return None
        tol = self.s.eps_infeas * ny
        dyu = sc.E * dy  # back to unscaled bound units cancels E in l, u
        if _norm_inf((1.0 / sc.D) * (sc.AT @ dy)) > tol:
            return None
        pos = np.maximum(dy, 0.0)
        neg = np.minimum(dy, 0.0)
        if np.any((pos > tol) & (sc.u >= INF)) or np.any((neg < -tol) & (sc.l <= -INF)):
            return None
        ub = np.where(sc.u < INF, sc.u, 0.0)
        lb = np.where(sc.l > -INF, sc.l, 0.0)
        if ub @ pos + lb @ neg < -tol:
            return dyu / max(_norm_inf(dyu), 1e-300)
        return None

    def _dual_infeasible(self, dx):
        sc = self.sc
        nx = _norm_inf(dx)
        if nx < 1e-12:
            return None
        tol = self.s.eps_infeas * nx
        if _norm_inf(sc.P @ dx) > tol * sc.c or sc.q @ dx >= -tol * sc.c:
            return None
        Adx = sc.A @ dx
        lo_ok = np.where(sc.l > -INF, Adx >= -tol, True)
        hi_ok = np.where(sc.u < INF, Adx <= tol, True)
        if np.all(lo_ok & hi_ok):
            v = sc.D * dx
            return v / max(_norm_inf(v), 1e-300)
        return None


@dataclass
class IpmSettings:
    max_iters: int = 200
    step_frac: float = 0.995
    reg: float = 1e-10
    dense_max_vars: int = 2500
    dense_max_entries: int = 200000
    polish: bool = True
    polish_delta: float = 1e-9
    polish_refine: int = 6
    polish_rounds: int = 3
    diverge: float = 1e14


class InteriorPointSolver:
    """Primal-dual interior point method with Mehrotra corrections.

    Rows are split into equalities and ranged inequalities ``l <= s <= u``
    with ``s = Ax``. Each Newton step eliminates the slacks and solves the
    normal equations ``(P + A' S A) dx = r`` on the inequality rows,
    bordered by the equality rows when there are any. The iteration count
    hardly depends on degeneracy, which makes this the robust choice for the
    cutting-plane subproblems.
    """

    def __init__(self, prob: QpProblem, settings: Optional[IpmSettings] = None, normal=None):
        self.prob = prob
        self.s = settings or IpmSettings()
        self.normal = normal
        l, u = prob.l, prob.u
        hl = l > -INF
        hu = u < INF
        self.eq = hl & hu & (np.abs(u - l) <= 1e-12 * (1.0 + np.abs(u)))
        self.hl = hl & ~self.eq
        self.hu = hu & ~self.eq
        free = ~(hl | hu)
        self.ineq = np.flatnonzero(~self.eq & ~free)
        self.eqi = np.flatnonzero(self.eq)
        n = prob.n_var
        # small problems run on dense arrays to avoid sparse-call overhead
        self.dense = normal is None and n + self.eqi.size <= self.s.dense_max_vars and \
            self.ineq.size * n <= self.s.dense_max_entries
        if self.dense:
            A = prob.A.toarray()
            self.Ain = A[self.ineq]
            self.AinT = self.Ain.T
            self.Aeq = A[self.eqi]
            self.P = prob.P.toarray()
        else:
            A = prob.A.tocsr()
            self.Ain = A[self.ineq]
            self.Aeq = A[self.eqi]
            self.AinT = self.Ain.T.tocsr()
            self.P = prob.P
        if normal is not None and self.eqi.size:
            raise ParameterError("a custom normal-equation solver needs a problem without equalities")

    def _factor(self, Sig):
        prob, s = self.prob, self.s
        n = prob.n_var
        if self.normal is not None:
            full = np.zeros(prob.n_con)
            full[self.ineq] = Sig
            return self.normal(full, s.reg)
        ne = self.eqi.size
        reg = s.reg
        dense = n + ne <= s.dense_max_vars
        if self.dense:
            M = self.P + (self.AinT * Sig) @ self.Ain
        else:
            M = self.P + self.AinT @ sp.diags(Sig) @ self.Ain
        if ne == 0:
            if dense:
                Md = M.copy() if self.dense else M.toarray()
                Md[np.diag_indices(n)] += reg
                for _ in range(6):
                    try:
                        cf = sla.cho_factor(Md, lower=True, check_finite=False)
                        return lambda r: sla.cho_solve(cf, r, check_finite=False)
                    except np.linalg.LinAlgError:
                        Md[np.diag_indices(n)] += reg * 99.0
                        reg *= 100.0
                raise np.linalg.LinAlgError("normal equations are singular")
            lu = spla.splu(
                sp.csc_matrix(M + reg * sp.identity(n)),
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
            return lu.solve
        if self.dense:
            K = np.block([[M + reg * np.eye(n), self.Aeq.T], [self.Aeq, -reg * np.eye(ne)]])
        else:
            K = sp.bmat(
                [[M + reg * sp.identity(n), self.Aeq.T], [self.Aeq, -reg * sp.identity(ne)]],
                format="csc",
            )
        if dense:
            lu_d = sla.lu_factor(K if self.dense else K.toarray(), check_finite=False)
            f = lambda r: sla.lu_solve(lu_d, r, check_finite=False)
        else:
            f = spla.splu(K, permc_spec="MMD_AT_PLUS_A").solve
        return lambda r, re: (lambda v: (v[:n], v[n:]))(f(np.concatenate([r, re])))

    def _start(self, l, u, hl, hu, hl_f, hu_f, beq):
        """Mehrotra-style starting point from a regularized least-squares fit."""
        prob = self.prob
        n = prob.n_var
        target = np.where(hl & hu, 0.5 * (l + u), np.where(hl, l, u))
        target = np.where(hl | hu, target, 0.0)
        ones = (hl | hu).astype(float)
        try:
            solver = self._factor(ones)
            rhs = -prob.q + self.AinT @ (ones * target)
            x = solver(rhs, beq)[0] if self.eqi.size else solver(rhs)
        except (np.linalg.LinAlgError, RuntimeError):
            x = np.zeros(n)
        if not np.all(np.isfinite(x)):
            x = np.zeros(n)
        s = self.Ain @ x
        ye = ones * (s - target)
        wl = hl_f * (s - l)
        wu = hu_f * (u - s)
        zl = hl_f * np.maximum(-ye, 0.0)
        zu = hu_f * np.maximum(ye, 0.0)
        w_all = np.concatenate([wl[hl], wu[hu]])
        z_all = np.concatenate([zl[hl], zu[hu]])
        if w_all.size:
            dw = max(-1.5 * w_all.min(), 0.0)
            dz = max(-1.5 * z_all.min(), 0.0)
            w_all = w_all + dw
            z_all = z_all + dz
            pr = float(w_all @ z_all)
            if pr <= 1e-12 or not np.isfinite(pr):
                w_all = np.maximum(w_all, 1.0)
                z_all = np.maximum(z_all, 1.0)
            else:
                w_all = w_all + 0.5 * pr / max(z_all.sum(), 1e-300)
                z_all = z_all + 0.5 * pr / max(w_all.sum(), 1e-300)
            nl = int(hl.sum())
            wl = np.zeros_like(wl)
            wu = np.zeros_like(wu)
            zl = np.zeros_like(zl)
            zu = np.zeros_like(zu)
            wl[hl], wu[hu] = w_all[:nl], w_all[nl:]
            zl[hl], zu[hu] = z_all[:nl], z_all[nl:]
        return x, s, wl, wu, zl, zu

    def solve(self, eps: float = 1e-6, max_iters: Optional[int] = None) -> QpSolution:
        prob, st = self.prob, self.s
        max_iters = st.max_iters if max_iters is None else max_iters
        n = prob.n_var
        P, q = self.P, prob.q
        Ain, AinT, Aeq = self.Ain, self.AinT, self.Aeq
        hl = self.hl[self.ineq]
        hu = self.hu[self.ineq]
        l = np.where(hl, prob.l[self.ineq], 0.0)
        u = np.where(hu, prob.u[self.ineq], 0.0)
        beq = prob.l[self.eqi]
        nb = int(hl.sum() + hu.sum())
        tol = 1e-2 * eps
        hl_f, hu_f = hl.astype(float), hu.astype(float)
        x, s, wl, wu, zl, zu = self._start(l, u, hl, hu, hl_f, hu_f, beq)
        y = zu - zl
        yeq = np.zeros(self.eqi.size)
        it = 0
        status = QpStatus.MAX_ITERS
        scale_d = 1.0 + _norm_inf(q)
        best = (np.inf,)
        last_dx = np.zeros(n)
        while it < max_iters:
            rd = P @ x + q + AinT @ y
            if Aeq.shape[0]:
                rd = rd + Aeq.T @ yeq
            Ax = Ain @ x
            rp = Ax - s
            rs = -y - zl + zu
            rl = hl_f * (s - wl - l)
            ru = hu_f * (s + wu - u)
            req = Aeq @ x - beq if Aeq.shape[0] else np.zeros(0)
            mu = (wl @ zl + wu @ zu) / max(nb, 1)
            pres = max(_norm_inf(rp), _norm_inf(rl), _norm_inf(ru), _norm_inf(req))
            dres = max(_norm_inf(rd), _norm_inf(rs))
            log.debug("ipm %d: pres %.1e dres %.1e mu %.1e", it, pres, dres, mu)
            pobj = 0.5 * float(x @ (P @ x)) + float(q @ x)
            small_gap = mu <= tol * 1e-1 or mu * nb <= tol * 1e-1 * abs(pobj)
            if pres <= tol * (1.0 + _norm_inf(Ax)) and dres <= tol * scale_d and small_gap:
                status = QpStatus.OPTIMAL
                break
            if max(_norm_inf(x), _norm_inf(y)) > st.diverge:
                break
            merit = max(pres, dres, mu)
            if merit < best[0]:
                best = (merit, x, s, y, yeq, wl, wu, zl, zu)
            elif merit > 1e3 * best[0] and best[0] < tol * scale_d:
                # roundoff has taken over; fall back to the best iterate
                break
            it += 1
            wl_s = np.where(hl, wl, 1.0)
            wu_s = np.where(hu, wu, 1.0)
            Sig = hl_f * zl / wl_s + hu_f * zu / wu_s
            try:
                solver = self._factor(Sig)
            except (np.linalg.LinAlgError, RuntimeError) as exc:
                log.debug("ipm: factorization failed: %s", exc)
                break

            def direction(cl, cu):
                h = -rs + hl_f * (cl + zl * rl) / wl_s + hu_f * (zu * ru - cu) / wu_s
                rhs = -rd - AinT @ (Sig * rp + h)
                if Aeq.shape[0]:
                    dx, dyeq = solver(rhs, -req)
                else:
                    dx, dyeq = solver(rhs), np.zeros(0)
                adx = Ain @ dx + rp
                dy = Sig * adx + h
                pos = Sig > 0
                ds = np.where(pos, (dy - h) / np.where(pos, Sig, 1.0), adx)
                dwl = hl_f * (ds + rl)
                dzl = hl_f * (-cl - zl * dwl) / wl_s
                dwu = hu_f * (-ru - ds)
                dzu = hu_f * (-cu - zu * dwu) / wu_s
                return dx, ds, dy, dyeq, dwl, dzl, dwu, dzu

            v_all = np.concatenate((wl, zl, wu, zu))

            def max_step(dwl, dzl, dwu, dzu):
                # rows without a bound carry exact zeros, so they never block
                dv = np.concatenate((dwl, dzl, dwu, dzu))
                neg = dv < 0
                if not neg.any():
                    return 1.0
                return min(1.0, float(np.min(-v_all[neg] / dv[neg])))

            d = direction(wl * zl, wu * zu)
            a_aff = max_step(*d[4:])
            mu_aff = ((wl + a_aff * d[4]) @ (zl + a_aff * d[5]) + (wu + a_aff * d[6]) @ (zu + a_aff * d[7])) / max(nb, 1)
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            cl = hl_f * (wl * zl + d[4] * d[5] - sigma * mu)
            cu = hu_f * (wu * zu + d[6] * d[7] - sigma * mu)
            d = direction(cl, cu)
            last_dx = d[0]
            a = min(1.0, st.step_frac * max_step(*d[4:]))
            x = x + a * d[0]
            s = s + a * d[1]
            y = y + a * d[2]
            yeq = yeq + a * d[3]
            wl = wl + a * d[4]
            zl = zl + a * d[5]
            wu = wu + a * d[6]
            zu = zu + a * d[7]
        x_div = x
        if status is not QpStatus.OPTIMAL and len(best) > 1 and max(_norm_inf(x), _norm_inf(y)) <= st.diverge:
            _, x, s, y, yeq, wl, wu, zl, zu = best
        elif status is not QpStatus.OPTIMAL and len(best) > 1 and best[0] < tol * scale_d:
            _, x, s, y, yeq, wl, wu, zl, zu = best
        yfull = np.zeros(prob.n_con)
        yfull[self.ineq] = y
        yfull[self.eqi] = yeq
        # rows whose multiplier dominates their slack are taken as active
        up = np.zeros(prob.n_con, dtype=bool)
        low = np.zeros(prob.n_con, dtype=bool)
        up[self.ineq] = hu & (zu > wu)
        low[self.ineq] = hl & (zl > wl) & ~up[self.ineq]
        self._guess = (up, low)
        unsolved = status is not QpStatus.OPTIMAL and len(best) > 1 and best[0] > tol * scale_d
        polished = False
        if st.polish:
            x, yfull, polished = self.polish(x, yfull, eps)
        prim, dual, _ = prob.residuals(x, yfull)
        if max(prim, dual) <= eps:
            status = QpStatus.OPTIMAL
        elif status is QpStatus.OPTIMAL:
            status = QpStatus.MAX_ITERS
        if status is not QpStatus.OPTIMAL and unsolved:
            # a stalled or diverging run: report infeasibility only with a checked certificate
            cert = _farkas_certificate(prob, yfull)
            if cert is not None:
                return QpSolution(x, cert, np.nan, np.inf, np.inf, QpStatus.INFEASIBLE, it, certificate=cert)
            for cand in (x, last_dx, x_div):
                cert = _recession_certificate(prob, cand)
                if cert is not None:
                    return QpSolution(x, yfull, -np.inf, np.inf, np.inf, QpStatus.UNBOUNDED, it, certificate=cert)
        return QpSolution(x, yfull, prob.objective(x), prim, dual, status, it, polished=polished)

    def polish(self, x, y, eps: float):
        """Active-set refinement of an interior iterate.

        Returns ``(x, y, polished)``; the input is kept when the refined
        point is not better.
        """
        prob = self.prob
        space = _Space(prob.P, prob.q, prob.A.tocsr(), prob.l, prob.u, self.eq)
        res = _pdas_polish(space, prob, x, prob.A @ x, y, eps, self.s, lambda a, b: (a, b),
                           first=getattr(self, "_guess", None))
        if res is not None:
            prim0, dual0, _ = prob.residuals(x, y)
            if res[0] <= eps or res[0] < max(prim0, dual0):
                return res[1], res[2], res[0] <= eps
        return x, y, False


def solve_qp(prob: QpProblem, eps: float = 1e-6, max_iters: int = 20000, x0=None, y0=None,
             settings=None, method: str = "admm", normal=None) -> QpSolution:
    """Solve a convex QP to residuals ``eps`` (absolute, infinity norm).

    ``method="admm"`` runs operator splitting with polishing and accepts a
    warm start. ``method="ipm"`` runs the interior point method, ignores
    the warm start and caps its own iteration count at
    ``min(max_iters, settings.max_iters)``. ``normal`` optionally replaces
    its linear algebra: ``normal(sig, reg)`` must return a solver for
    ``(P + A' diag(sig) A + reg*I) dx = r``.
    """
    if eps <= 0:
        raise ParameterError("eps must be positive")
    if method == "admm":
        return AdmmSolver(prob, settings).solve(eps=eps, max_iters=max_iters, x0=x0, y0=y0)
    if method == "ipm":
        solver = InteriorPointSolver(prob, settings, normal=normal)
        return solver.solve(eps=eps, max_iters=min(max_iters, solver.s.max_iters))
    raise ParameterError(f"unknown QP method {method!r}")


def solve_lp(c, A, l, u, eps: float = 1e-7, max_iters: int = 20000, x0=None, y0=None,
             method: str = "admm", settings=None) -> QpSolution:
    """Solve ``min c'x s.t. l <= Ax <= u`` as a QP with zero curvature.

    Unbounded problems come back with status ``Unbounded`` and a recession
    direction in ``certificate``.
    """
    c = np.asarray(c, dtype=float).ravel()
    P = sp.csc_matrix((c.shape[0], c.shape[0]))
    prob = QpProblem(P, c, A, l, u)
    return solve_qp(prob, eps=eps, max_iters=max_iters, x0=x0, y0=y0, method=method, settings=settings)
