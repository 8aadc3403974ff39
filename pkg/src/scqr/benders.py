"""Generalized Benders decomposition for cardinality-constrained CQR.

The subproblem ``g(z)`` is the regularized CQR fit with the features
outside ``z`` masked. It is convex in ``z`` and its dual yields the
subgradient

    dg/dz_p = -1/2 sum_i (sum_j mu_ij (x_j - x_i))_p^2

over every coordinate ``p``. Each evaluation produces one Benders cut
``g(z*) + s'(z - z*) <= gamma``; the binary master minimizes ``gamma``
over ``{z : sum(z) <= k}`` subject to all cuts.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import json
import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .cqr import fit_cqr
from .qp import INF, IpmSettings, QpProblem, QpStatus, solve_lp, solve_qp
from .types import CqrModel, Dataset, ParameterError, QuantileConfig, ScqrError, SupportVector

log = logging.getLogger(__name__)

PRUNE_TOL = 1e-7
SUBGRAD_TOL = 1e-10
_LP_IPM = IpmSettings(polish=False)


@dataclass(frozen=True)
class DualSolution:
    """Multipliers of the masked CQR problem.

    ``lam`` and ``lam_star`` belong to the two residual bands, ``mu`` to the
    convexity pairs that were generated; missing pairs are zero.
    """

    lam: np.ndarray
    lam_star: np.ndarray
    mu: Dict[Tuple[int, int], float] = field(default_factory=dict)

    def mu_arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        if not self.mu:
            e = np.zeros(0, dtype=np.int64)
            return e, e, np.zeros(0)
        keys = np.array(list(self.mu.keys()), dtype=np.int64)
        vals = np.fromiter(self.mu.values(), dtype=float, count=len(self.mu))
        return keys[:, 0], keys[:, 1], vals

    def flow_residual(self) -> np.ndarray:
        """``-lam_i + lam*_i + sum_j mu_ij - sum_j mu_ji`` for every ``i``."""
        n = self.lam.shape[0]
        I, J, V = self.mu_arrays()
        out = -self.lam + self.lam_star
        out = out + np.bincount(I, weights=V, minlength=n) - np.bincount(J, weights=V, minlength=n)
        return out

    def box_violation(self, tau: float, C: float) -> float:
        lo = min(float(self.lam.min()), float(self.lam_star.min()), 0.0)
        hi = max(float(np.max(self.lam - tau * C)), float(np.max(self.lam_star - (1.0 - tau) * C)), 0.0)
        mu_lo = min(min(self.mu.values(), default=0.0), 0.0)
        return max(-lo, hi, -mu_lo)

    def w(self, X: np.ndarray) -> np.ndarray:
        """Rows ``w_i = sum_j mu_ij (x_j - x_i)`` over all columns of ``X``."""
        return pair_weighted_differences(X, *self.mu_arrays())


def pair_weighted_differences(X: np.ndarray, I, J, V) -> np.ndarray:
    n = X.shape[0]
    if len(V) == 0:
        return np.zeros_like(X, dtype=float)
    M = sp.csr_matrix((V, (I, J)), shape=(n, n))
    rs = np.asarray(M.sum(axis=1)).ravel()
    return M @ X - rs[:, None] * X


def dual_objective(data: Dataset, cfg: QuantileConfig, dual: DualSolution, z: SupportVector) -> float:
    """Dual value of the masked problem at the given multipliers.

    ``-1/2 sum_i ||Z w_i||^2 + sum_i lam_i (y_i - (1-tau) eps)
    - sum_i lam*_i (y_i + tau eps)``; a lower bound on ``g(z)`` for any
    feasible multipliers and equal to it at the optimum.
    """
    W = dual.w(data.X)
    zf = z.z.astype(float)
    quad = -0.5 * float(np.sum((W * W) @ zf))
    tau, eps = cfg.tau, cfg.epsilon
    lin = float(dual.lam @ (data.y - (1.0 - tau) * eps) - dual.lam_star @ (data.y + tau * eps))
    return quad + lin


@dataclass(frozen=True)
class BendersCut:
    """Affine underestimator ``g_value + subgrad'(z - z_star)`` of ``g``."""

    z_star: SupportVector
    g_value: float
    subgrad: np.ndarray

    def __post_init__(self):
        s = np.array(self.subgrad, dtype=float)
        if s.shape != (self.z_star.d,):
            raise ParameterError("subgradient length must equal d")
        if np.any(s > SUBGRAD_TOL):
            raise ParameterError("Benders subgradient components must be nonpositive")
        s.setflags(write=False)
        object.__setattr__(self, "subgrad", s)
        object.__setattr__(self, "g_value", float(self.g_value))

    @property
    def intercept(self) -> float:
        return self.g_value - float(self.subgrad @ self.z_star.z)

    def value_at(self, z) -> np.ndarray:
        """Cut value at one support or at each row of a 0/1 matrix."""
        Z = z.z if isinstance(z, SupportVector) else np.asarray(z, dtype=float)
        return self.intercept + Z @ self.subgrad

    def to_dict(self) -> dict:
        return {"z": self.z_star.bits(), "g": self.g_value, "subgrad": [float(v) for v in self.subgrad]}


@dataclass
class Evaluation:
    """Everything one subproblem solve produces."""

    z: SupportVector
    g_value: float
    cut: BendersCut
    dual: DualSolution
    model: Optional[CqrModel]
    wall_time: float


def _one_dim_quantile_value(y: np.ndarray, tau: float, C: float) -> float:
    """``C * min_c sum_i rho_tau(y_i - c)``, attained at an order statistic."""
    ys = np.sort(y)
    best = math.inf
    for c in ys:
        u = y - c
        best = min(best, float(np.sum(np.where(u >= 0, tau * u, (tau - 1.0) * u))))
    return C * best


def eval_subproblem(data: Dataset, cfg: QuantileConfig, z: SupportVector,
                    initial_pairs: Sequence[Tuple[int, int]] = ()) -> Tuple[float, BendersCut, DualSolution]:
    """Solve the masked CQR problem and build its Benders cut.

    ``initial_pairs`` seeds the convexity pool; the optimum does not depend
    on it since any missing pair is generated by separation.
    """
    ev = _evaluate(data, cfg, z, initial_pairs)
    return ev.g_value, ev.cut, ev.dual


def _evaluate(data: Dataset, cfg: QuantileConfig, z: SupportVector,
              initial_pairs: Sequence[Tuple[int, int]] = ()) -> Evaluation:
    if not cfg.regularized:
        raise ParameterError("Benders cuts need the regularized subproblem")
    if z.d != data.d:
        raise ParameterError(f"support has length {z.d}, data has d={data.d}")
    t0 = time.perf_counter()
    model, _ = fit_cqr(data, cfg, mask=z, initial_pairs=initial_pairs)
    C, tau = cfg.C, cfg.tau
    lam = np.clip(model.lam, 0.0, tau * C)
    lam_star = np.clip(model.lam_star, 0.0, (1.0 - tau) * C)
    dual = DualSolution(lam=lam, lam_star=lam_star, mu=dict(model.mu))
    W = dual.w(data.X)
    subgrad = -0.5 * np.sum(W * W, axis=0)
    g = float(model.objective)
    cut = BendersCut(z_star=z, g_value=g, subgrad=subgrad)
    return Evaluation(z, g, cut, dual, model, time.perf_counter() - t0)


class SubproblemOracle:
    """Memoized ``g(z)`` evaluator shared by GBD, LSB and the subset oracle.

    With ``reuse_pairs`` every convexity pair generated so far seeds the
    next solve (up to ``max_seed`` pairs, after which only the pairs with
    positive multipliers in the last solve are kept). Seeding shortens the
    cutting-plane loop without changing its optimum.
    """

    def __init__(self, data: Dataset, cfg: QuantileConfig, reuse_pairs: bool = True, keep_models: bool = False,
                 max_seed: Optional[int] = None):
        if not cfg.regularized:
            raise ParameterError("Benders cuts need the regularized subproblem")
        self.data = data
        self.cfg = cfg
        self.reuse_pairs = reuse_pairs
        self.keep_models = keep_models
        self.max_seed = 40 * data.n if max_seed is None else int(max_seed)
        self._cache: Dict[str, Evaluation] = {}
        self._seed: List[Tuple[int, int]] = []
        self._seed_set = set()
        self.n_solves = 0
        self.solve_time = 0.0

    def __contains__(self, z: SupportVector) -> bool:
        return z.bits() in self._cache

    def __len__(self) -> int:
        return len(self._cache)

    def cached(self, z: SupportVector) -> Optional[Evaluation]:
        return self._cache.get(z.bits())

    def __call__(self, z: SupportVector) -> Evaluation:
        key = z.bits()
        ev = self._cache.get(key)
        if ev is not None:
            return ev
        ev = _evaluate(self.data, self.cfg, z, self._seed if self.reuse_pairs else ())
        self.n_solves += 1
        self.solve_time += ev.wall_time
        if self.reuse_pairs:
            self._grow_seed(ev.dual.mu)
        stored = ev if self.keep_models else Evaluation(ev.z, ev.g_value, ev.cut, ev.dual, None, ev.wall_time)
        self._cache[key] = stored
        return ev

    def _grow_seed(self, mu):
        fresh = [p for p in mu if p not in self._seed_set]
        if len(self._seed) + len(fresh) <= self.max_seed:
            self._seed.extend(fresh)
            self._seed_set.update(fresh)
            return
        floor = 1e-9 * self.cfg.C
        keep = [p for p, v in mu.items() if v > floor][: self.max_seed]
        self._seed = keep
        self._seed_set = set(keep)

    def model(self, z: SupportVector) -> CqrModel:
        """Fitted model at ``z``, refitting when it was not kept."""
        ev = self._cache.get(z.bits())
        if ev is not None and ev.model is not None:
            return ev.model
        model, _ = fit_cqr(self.data, self.cfg, mask=z, initial_pairs=self._seed if self.reuse_pairs else ())
        return model

    def evaluations(self) -> List[Evaluation]:
        return list(self._cache.values())


# ---------------------------------------------------------------- master


class CutMatrix:
    """Cut pool stored as ``gamma >= a_t + S_t z``."""

    def __init__(self, d: int, cuts: Sequence[BendersCut] = ()):
        self.d = d
        self._a: List[float] = []
        self._S: List[np.ndarray] = []
        self._keys = set()
        for c in cuts:
            self.add(c)

    def add(self, cut: BendersCut) -> bool:
        if cut.z_star.d != self.d:
            raise ParameterError("cut dimension does not match the master")
        key = (cut.z_star.bits(), cut.g_value)
        if key in self._keys:
            return False
        self._keys.add(key)
        self._a.append(cut.intercept)
        self._S.append(np.asarray(cut.subgrad, dtype=float))
        return True

    def __len__(self) -> int:
        return len(self._a)

    @property
    def a(self) -> np.ndarray:
        return np.asarray(self._a, dtype=float)

    @property
    def S(self) -> np.ndarray:
        return np.vstack(self._S) if self._S else np.zeros((0, self.d))

    def values(self, Z) -> np.ndarray:
        """``max_t a_t + S_t z`` for each row of ``Z``."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        return np.max(Z @ self.S.T + self.a[None, :], axis=1)


def _hamming_ball(center: np.ndarray, r: int, k: int) -> np.ndarray:
    """All 0/1 vectors within distance ``r`` of ``center`` with at most ``k`` ones.

    Ordered by distance, then by the lexicographic order of flipped sets.
    """
    d = center.shape[0]
    ones = [int(p) for p in np.flatnonzero(center)]
    zeros = [int(p) for p in np.flatnonzero(center == 0)]
    out = []
    for h in range(0, min(r, d) + 1):
        for a in range(0, min(h, len(ones)) + 1):
            b = h - a
            if b > len(zeros) or len(ones) - a + b > k:
                continue
            for drop in itertools.combinations(ones, a):
                for add in itertools.combinations(zeros, b):
                    z = center.copy()
                    z[list(drop)] = 0
                    z[list(add)] = 1
                    out.append(z)
    return np.array(out, dtype=np.int8).reshape(-1, d)


def _ball_size(center: np.ndarray, r: int, k: int) -> int:
    n1 = int(center.sum())
    n0 = center.shape[0] - n1
    total = 0
    for h in range(0, min(r, center.shape[0]) + 1):
        for a in range(0, min(h, n1) + 1):
            b = h - a
            if b <= n0 and n1 - a + b <= k:
                total += math.comb(n1, a) * math.comb(n0, b)
    return total


@dataclass
class MasterStats:
    nodes: int = 0
    lp_solves: int = 0
    method: str = ""


def _node_lp(cm_a, cm_S, free, ones, k, restriction):
    """LP relaxation of a B&B node in the free coordinates plus ``gamma``."""
    f = free.size
    T = cm_a.size
    const = cm_a + cm_S[:, ones].sum(axis=1)
    rows = [np.hstack([cm_S[:, free], -np.ones((T, 1))])]
    lo = [np.full(T, -INF)]
    hi = [-const]
    rows.append(np.hstack([np.ones((1, f)), np.zeros((1, 1))]))
    lo.append(np.array([-INF]))
    hi.append(np.array([float(k - ones.size)]))
    rows.append(np.hstack([np.eye(f), np.zeros((f, 1))]))
    lo.append(np.zeros(f))
    hi.append(np.ones(f))
    if restriction is not None:
        center, r, fixed_dist = restriction
        c = center[free]
        rows.append(np.hstack([np.where(c == 1, -1.0, 1.0)[None, :], np.zeros((1, 1))]))
        lo.append(np.array([-INF]))
        hi.append(np.array([float(r - fixed_dist - int(c.sum()))]))
    A = sp.csr_matrix(np.vstack(rows))
    cvec = np.zeros(f + 1)
    cvec[-1] = 1.0
    return solve_lp(cvec, A, np.concatenate(lo), np.concatenate(hi), eps=1e-9, method="ipm", settings=_LP_IPM)


def _branch_and_bound(cm: CutMatrix, k: int, restriction=None, stats: Optional[MasterStats] = None):
    d = cm.d
    a, S = cm.a, cm.S
    kk = min(k, d)
    center = r = None
    if restriction is not None:
        center, r = restriction
    stats = stats if stats is not None else MasterStats()

    def feasible(z):
        if z.sum() > k:
            return False
        return center is None or int(np.sum(z != center)) <= r

    # incumbent from cut centers and per-cut minimizers
    cands = []
    for t in range(a.size):
        order = np.argsort(S[t], kind="stable")
        z = np.zeros(d, dtype=np.int8)
        z[order[:kk]] = 1
        cands.append(z)
    if center is not None:
        cands.append(center.astype(np.int8))
    cands = [z for z in cands if feasible(z)]
    best_z, best_v = None, math.inf
    if cands:
        vals = cm.values(np.array(cands))
        i = int(np.argmin(vals))
        best_z, best_v = cands[i].copy(), float(vals[i])

    def weighted_bound(lam, fone, free, room):
        # Lagrangian bound of the node from a convex combination of cuts
        s = lam @ S
        v = float(lam @ a) + float(s[fone].sum())
        if free.size and room > 0:
            v += float(np.minimum(np.sort(s[free])[:room], 0.0).sum())
        return v

    counter = itertools.count()
    empty = np.zeros(0, dtype=np.int64)
    heap = [(-math.inf, next(counter), empty, empty, None)]
    while heap:
        bound, _, fone, fzero, lam = heapq.heappop(heap)
        if bound >= best_v - PRUNE_TOL:
            continue
        stats.nodes += 1
        fixed = np.zeros(d, dtype=bool)
        fixed[fone] = True
        fixed[fzero] = True
        free = np.flatnonzero(~fixed)
        room = k - fone.size
        fixed_dist = 0
        if center is not None:
            fixed_dist = int(np.sum(center[fone] == 0) + np.sum(center[fzero] == 1))
            if fixed_dist > r:
                continue
        # per-cut bound: every cut is minimized by its most negative free coordinates
        base = a + S[:, fone].sum(axis=1)
        if free.size and room > 0:
            Sf = np.sort(S[:, free], axis=1)[:, :room]
            cheap = float(np.max(base + np.minimum(Sf, 0.0).sum(axis=1)))
        else:
            cheap = float(np.max(base))
        bound = max(bound, cheap)
        if lam is not None and bound < best_v - PRUNE_TOL:
            bound = max(bound, weighted_bound(lam, fone, free, room))
        if bound >= best_v - PRUNE_TOL:
            continue
        if free.size == 0 or room == 0:
            z = np.zeros(d, dtype=np.int8)
            z[fone] = 1
            if feasible(z):
                v = float(cm.values(z)[0])
                if v < best_v - PRUNE_TOL:
                    best_z, best_v = z, v
            continue
        sol = _node_lp(a, S, free, fone, k, None if center is None else (center, r, fixed_dist))
        stats.lp_solves += 1
        if sol.status is QpStatus.INFEASIBLE:
            continue
        zf = None
        lam_child = None
        if sol.status is QpStatus.OPTIMAL:
            bound = max(bound, float(sol.x[-1]) - 1e-9)
            w = np.clip(sol.dual[:a.size], 0.0, None)
            if w.sum() > 0:
                lam_child = w / w.sum()
            zf = np.clip(sol.x[:-1], 0.0, 1.0)
            if bound >= best_v - PRUNE_TOL:
                continue
            # rounding heuristic: fixed ones plus the largest free LP values
            order = free[np.argsort(-zf, kind="stable")]
            zr = np.zeros(d, dtype=np.int8)
            zr[fone] = 1
            zr[order[:room]] = 1
            if feasible(zr):
                v = float(cm.values(zr)[0])
                if v < best_v - PRUNE_TOL:
                    best_z, best_v = zr, v
            frac = np.abs(zf - 0.5)
            if np.all(np.minimum(zf, 1.0 - zf) <= 1e-6):
                zi = np.zeros(d, dtype=np.int8)
                zi[fone] = 1
                zi[free[zf > 0.5]] = 1
                if feasible(zi):
                    v = float(cm.values(zi)[0])
                    if v < best_v - PRUNE_TOL:
                        best_z, best_v = zi, v
                    if v <= bound + 1e-9:
                        continue
            p = int(free[int(np.argmin(frac))])
        else:
            p = int(free[0])
        if room >= 1:
            heapq.heappush(heap, (bound, next(counter), np.append(fone, p), fzero, lam_child))
        heapq.heappush(heap, (bound, next(counter), fone, np.append(fzero, p), lam_child))
    if best_z is None:
        raise ScqrError("restricted master has no feasible support")
    return best_z, best_v


def solve_master(cuts, d: int, k: int, restriction: Optional[Tuple[SupportVector, int]] = None,
                 stats: Optional[MasterStats] = None) -> Tuple[SupportVector, float]:
    """Exact minimizer of the cut pool maximum over ``{z : sum(z) <= k}``.

    ``cuts`` is a list of :class:`BendersCut` or a :class:`CutMatrix`.
    With ``restriction=(center, r)`` the search is limited to the Hamming
    ball of radius ``r``; small balls are enumerated, everything else goes
    through branch and bound with LP bounds.
    """
    cm = cuts if isinstance(cuts, CutMatrix) else CutMatrix(d, cuts)
    if len(cm) == 0:
        raise ParameterError("the master needs at least one cut")
    if cm.d != d:
        raise ParameterError("cut dimension does not match d")
    if k < 0:
        raise ParameterError("k must be nonnegative")
    stats = stats if stats is not None else MasterStats()
    if restriction is not None:
        center, r = restriction
        if r < 0:
            raise ParameterError("radius must be nonnegative")
        c = center.z.astype(np.int8)
        if c.sum() > k:
            raise ParameterError("restriction center violates the cardinality bound")
        if r < d and (r <= 2 or _ball_size(c, r, k) <= 20000):
            Z = _hamming_ball(c, int(r), k)
            vals = cm.values(Z)
            i = int(np.argmin(vals))
            stats.method = "enumeration"
            stats.nodes += Z.shape[0]
            return SupportVector(Z[i], k), float(vals[i])
        if r < d:
            stats.method = "branch-and-bound"
            z, v = _branch_and_bound(cm, k, (c, int(r)), stats)
            return SupportVector(z, k), v
    stats.method = "branch-and-bound"
    z, v = _branch_and_bound(cm, k, None, stats)
    return SupportVector(z, k), v


# ------------------------------------------------------------ warm start


class WarmStartMode(str, enum.Enum):
    ONE_SHOT = "OneShot"
    RELAXATION = "Relaxation"


def top_k_support(q: np.ndarray, k: int) -> SupportVector:
    """Indicator of the ``k`` largest entries; ties go to the smaller index."""
    q = np.asarray(q, dtype=float)
    order = np.lexsort((np.arange(q.size), -q))
    return SupportVector.from_indices(sorted(int(p) for p in order[:k]), q.size, k)


def feature_scores(data: Dataset, dual: DualSolution) -> np.ndarray:
    """``q_p = sum_i (sum_j mu_ij (x_j - x_i))_p^2``."""
    W = dual.w(data.X)
    return np.sum(W * W, axis=0)


@dataclass
class RelaxationResult:
    z: SupportVector
    lower_bound: float
    trace: Tuple[float, ...]
    fell_back: bool
    steps: int


def solve_relaxation(data: Dataset, cfg: QuantileConfig, k: int, steps: int = 500,
                     a: float = 1.0, b: float = 10.0, patience: int = 100,
                     oracle: Optional[SubproblemOracle] = None) -> RelaxationResult:
    """Projected subgradient on the top-k closed form of the relaxation.

    Minimizes ``F = 1/2 topk(q(mu)) - lam'(y - (1-tau) eps) + lam*'(y + tau eps)``
    over multipliers satisfying flow balance and the boxes, with ``mu``
    supported on the pairs of the full-feature fit. ``-F`` at any
    feasible point lower-bounds ``min g`` over supports of size ``<= k``.
    """
    _check_k(k, data.d)
    oracle = SubproblemOracle(data, cfg) if oracle is None else oracle
    ev = oracle(SupportVector(np.ones(data.d, dtype=np.int8), data.d))
    X, y, n = data.X, data.y, data.n
    tau, C, eps = cfg.tau, cfg.C, cfg.epsilon
    I, J, V = ev.dual.mu_arrays()
    m = V.size
    D = X[J] - X[I]
    nv = 2 * n + m
    rows = np.concatenate([np.arange(n), np.arange(n), I, J])
    cols = np.concatenate([np.arange(n), n + np.arange(n), 2 * n + np.arange(m), 2 * n + np.arange(m)])
    vals = np.concatenate([-np.ones(n), np.ones(n), np.ones(m), -np.ones(m)])
    Aflow = sp.csr_matrix((vals, (rows, cols)), shape=(n, nv))
    A = sp.vstack([Aflow, sp.identity(nv, format="csr")], format="csc")
    lo = np.concatenate([np.zeros(n), np.zeros(nv)])
    hi = np.concatenate([np.zeros(n), np.full(n, tau * C), np.full(n, (1.0 - tau) * C), np.full(m, INF)])
    P = sp.identity(nv, format="csc")
    cy_l = y - (1.0 - tau) * eps
    cy_u = y + tau * eps
    kk = min(k, data.d)

    def objective(v):
        lam, lst, mu = v[:n], v[n:2 * n], v[2 * n:]
        W = pair_weighted_differences(X, I, J, mu)
        q = np.sum(W * W, axis=0)
        top = np.sort(q)[::-1][:kk]
        return 0.5 * float(top.sum()) - float(lam @ cy_l) + float(lst @ cy_u), W, q

    def project(v, x0, y0):
        sol = solve_qp(QpProblem(P, -v, A, lo, hi), eps=1e-9, max_iters=20000, x0=x0, y0=y0, method="admm")
        if sol.status is not QpStatus.OPTIMAL and max(sol.primal_residual, sol.dual_residual) > 1e-6:
            raise ScqrError(f"relaxation projection failed with status {sol.status.value}")
        return sol

    v = np.concatenate([ev.dual.lam, ev.dual.lam_star, V])
    sol = project(v, None, None)
    v, x0, y0 = sol.x, sol.x, sol.dual
    F, W, q = objective(v)
    best = F
    trace = [F]
    stale = 0
    fell_back = False
    t = 0
    for t in range(1, steps + 1):
        K = np.lexsort((np.arange(q.size), -q))[:kk]
        g_mu = np.einsum("pr,pr->p", W[I][:, K], D[:, K])
        grad = np.concatenate([-cy_l, cy_u, g_mu])
        sol = project(v - (a / (b + t)) * grad, x0, y0)
        v, x0, y0 = sol.x, sol.x, sol.dual
        F, W, q = objective(v)
        trace.append(F)
        if F < best - 1e-12:
            best = F
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                fell_back = True
                break
    if fell_back:
        warnings.warn("relaxation warm start stalled; falling back to the one-shot ranking", RuntimeWarning)
        z = top_k_support(feature_scores(data, ev.dual), kk)
    else:
        z = top_k_support(q, kk)
    return RelaxationResult(z=SupportVector(z.z, k), lower_bound=-best, trace=tuple(trace), fell_back=fell_back, steps=t)


def warm_start(data: Dataset, cfg: QuantileConfig, k: int, mode="OneShot",
               oracle: Optional[SubproblemOracle] = None, **relax_kwargs) -> SupportVector:
    """Initial support for GBD.

    ``OneShot`` ranks features by ``q_p`` from the full-feature fit;
    ``Relaxation`` ranks them at the final projected-subgradient iterate.
    """
    _check_k(k, data.d)
    mode = WarmStartMode(mode)
    oracle = SubproblemOracle(data, cfg) if oracle is None else oracle
    if mode is WarmStartMode.ONE_SHOT:
        ev = oracle(SupportVector(np.ones(data.d, dtype=np.int8), data.d))
        z = top_k_support(feature_scores(data, ev.dual), min(k, data.d))
        return SupportVector(z.z, k)
    return solve_relaxation(data, cfg, k, oracle=oracle, **relax_kwargs).z


def _check_k(k: int, d: int) -> None:
    if int(k) < 1:
        raise ParameterError(f"k must be at least 1, got {k}")


# ------------------------------------------------------------------ GBD


@dataclass
class GbdState:
    """Cut pool, bounds and iteration log of a Benders run."""

    d: int
    k: int
    cuts: List[BendersCut] = field(default_factory=list)
    incumbent: Optional[SupportVector] = None
    incumbent_g: float = math.inf
    UB: float = math.inf
    LB: float = -math.inf
    t: int = 0
    history: List[dict] = field(default_factory=list)
    time_to_incumbent: float = 0.0
    wall_time: float = 0.0
    converged: bool = False

    def __post_init__(self):
        self._matrix = CutMatrix(self.d, self.cuts)

    @property
    def matrix(self) -> CutMatrix:
        return self._matrix

    def add_cut(self, cut: BendersCut) -> bool:
        if self._matrix.add(cut):
            self.cuts.append(cut)
            return True
        return False

    def gap(self) -> float:
        return self.UB - self.LB

    def relative_gap(self) -> float:
        if not math.isfinite(self.UB) or not math.isfinite(self.LB):
            return math.inf
        return max(self.UB - self.LB, 0.0) / (1.0 + abs(self.UB))

    def bound_traces(self) -> Tuple[np.ndarray, np.ndarray]:
        lb = np.array([h["LB"] for h in self.history], dtype=float)
        ub = np.array([h["UB"] for h in self.history], dtype=float)
        return lb, ub

    def incumbent_trace(self) -> np.ndarray:
        return np.array([h["incumbent_g"] for h in self.history], dtype=float)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(h, sort_keys=True) + "\n" for h in self.history)

    def summary(self) -> dict:
        return {
            "incumbent": None if self.incumbent is None else self.incumbent.bits(),
            "incumbent_g": self.incumbent_g,
            "UB": self.UB,
            "LB": self.LB,
            "iterations": self.t,
            "n_cuts": len(self.cuts),
            "converged": self.converged,
            "time_to_incumbent": self.time_to_incumbent,
            "wall_time": self.wall_time,
        }


def _finite(v: float):
    return float(v) if math.isfinite(v) else None


def run_gbd(data: Dataset, cfg: QuantileConfig, k: int, T: int = 80, gap_tol: float = 1e-6,
            z0: Optional[SupportVector] = None, warm="OneShot", oracle: Optional[SubproblemOracle] = None,
            cuts: Sequence[BendersCut] = (), restriction: Optional[Tuple[SupportVector, int]] = None,
            on_record: Optional[Callable[[dict], None]] = None, time_limit: Optional[float] = None,
            refit: bool = True, extra: Optional[dict] = None, clock_start: Optional[float] = None):
    """Benders loop: evaluate, cut, resolve the master, until the gap closes.

    Stops when ``UB - LB <= gap_tol * (1 + |UB|)`` or after iteration ``T``.
    The incumbent is the first support reaching the smallest ``g``.
    Returns the final :class:`GbdState` and the model at the incumbent
    (``None`` when ``refit`` is false).
    """
    _check_k(k, data.d)
    if int(T) < 1:
        raise ParameterError("T must be at least 1")
    t_start = time.perf_counter() if clock_start is None else clock_start
    oracle = SubproblemOracle(data, cfg) if oracle is None else oracle
    if z0 is None:
        if restriction is not None:
            z0 = restriction[0]
        else:
            z0 = warm_start(data, cfg, k, warm, oracle=oracle)
    z0 = SupportVector(z0.z, k)
    state = GbdState(d=data.d, k=k)
    for c in cuts:
        state.add_cut(c)
    z = z0
    stats = MasterStats()
    while True:
        ev = oracle(z)
        g = ev.g_value
        state.UB = min(state.UB, g)
        state.add_cut(ev.cut)
        if g < state.incumbent_g:
            state.incumbent, state.incumbent_g = z, g
            state.time_to_incumbent = time.perf_counter() - t_start
        z_next, gamma = solve_master(state.matrix, data.d, k, restriction, stats)
        state.LB = max(state.LB, gamma)
        rec = {
            "t": state.t,
            "z": z.bits(),
            "g": g,
            "gamma": gamma,
            "UB": state.UB,
            "LB": _finite(state.LB),
            "incumbent_g": state.incumbent_g,
            "wall_time": time.perf_counter() - t_start,
        }
        if extra:
            rec.update(extra)
        state.history.append(rec)
        if on_record is not None:
            on_record(rec)
        log.debug("gbd %d: g=%.6g UB=%.6g LB=%.6g", state.t, g, state.UB, state.LB)
        state.t += 1
        if state.UB - state.LB <= gap_tol * (1.0 + abs(state.UB)):
            state.converged = True
            break
        if state.t > T:
            break
        if time_limit is not None and time.perf_counter() - t_start > time_limit:
            break
        z = z_next
    state.wall_time = time.perf_counter() - t_start
    model = oracle.model(state.incumbent) if refit else None
    return state, model
