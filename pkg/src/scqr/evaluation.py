"""Metrics, cross-validation, the exhaustive subset oracle and the benchmark harness."""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from .benders import SubproblemOracle
from .cqr import fit_cqr, predict, primal_infeasibility
from .lsb import LsbSchedule, select_support
from .synth import DgpSpec, STREAM_FOLDS, gen_dgp, rng_stream, split_indices
from .types import (
    CqrModel,
    Dataset,
    InstanceSizeError,
    ParameterError,
    QuantileConfig,
    SupportVector,
    pinball_loss,
    standardize,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
BRUTE_FORCE_CAP = 2000


# ---------------------------------------------------------------- metrics


def mae_quantile(model: CqrModel, data: Dataset, tau: float) -> float:
    """Mean pinball loss of ``model`` on ``data``."""
    if data.n == 0:
        raise ParameterError("empty data")
    resid = data.y - predict(model, data.X)
    return float(np.mean(pinball_loss(resid, tau)))


def selection_accuracy(S_true: Iterable[int], S_hat: Iterable[int], k: int) -> float:
    """``|S_true & S_hat| / k``."""
    if int(k) < 1:
        raise ParameterError("k must be at least 1")
    return len(set(S_true) & set(S_hat)) / int(k)


def fdr(S_true: Iterable[int], S_hat: Iterable[int]) -> float:
    """Share of selected features outside the true support (0 for an empty selection)."""
    S_hat = set(S_hat)
    return len(S_hat - set(S_true)) / max(1, len(S_hat))


# ---------------------------------------------------------------- cross-validation


@dataclass(frozen=True)
class CvGrid:
    """Hyperparameter grid for k-fold cross-validation."""

    C_values: Tuple[float, ...] = (1.0,)
    eps_values: Tuple[float, ...] = (0.0,)
    k_values: Tuple[int, ...] = (1,)
    folds: int = 5
    tau: float = 0.5

    def __post_init__(self):
        for name in ("C_values", "eps_values", "k_values"):
            vals = tuple(getattr(self, name))
            if not vals:
                raise ParameterError(f"{name} must be nonempty")
            object.__setattr__(self, name, vals)
        if any(not c > 0 for c in self.C_values):
            raise ParameterError("C values must be positive")
        if any(not e >= 0 for e in self.eps_values):
            raise ParameterError("epsilon values must be nonnegative")
        if any(int(k) < 1 for k in self.k_values):
            raise ParameterError("k values must be positive integers")
        object.__setattr__(self, "k_values", tuple(int(k) for k in self.k_values))
        if int(self.folds) < 2:
            raise ParameterError("folds must be at least 2")
        if not 0.0 < self.tau < 1.0:
            raise ParameterError("tau must lie in (0, 1)")

    def points(self, with_k: bool) -> List[Tuple[float, float, Optional[int]]]:
        """Grid points sorted by the tie-breaking order (C, then epsilon, then k)."""
        ks = sorted(set(self.k_values)) if with_k else [None]
        Cs = sorted(float(c) for c in self.C_values)
        Es = sorted(float(e) for e in self.eps_values)
        return [(c, e, k) for c in Cs for e in Es for k in ks]


def fold_indices(n: int, folds: int, seed: int) -> List[np.ndarray]:
    """Seeded partition of ``range(n)`` into ``folds`` nearly equal parts."""
    if folds < 2:
        raise ParameterError("folds must be at least 2")
    perm = rng_stream(seed, STREAM_FOLDS).permutation(n)
    parts = [np.sort(p) for p in np.array_split(perm, folds)]
    if min(p.size for p in parts) < 2:
        raise ParameterError(f"n={n} leaves a fold with fewer than 2 samples")
    return parts


def cross_validate(data: Dataset, grid: CvGrid, pipeline: str = "CqrOnly", seed: int = 0,
                   base: Optional[QuantileConfig] = None, select_options: Optional[dict] = None,
                   reselect: bool = True) -> Tuple[dict, List[dict]]:
    """Average validation pinball loss over seeded folds for every grid point.

    ``CqrOnly`` scores ``(C, epsilon)`` with plain fits. ``ScqrGbd`` also
    scores ``k``: the support is selected on each training fold
    (``reselect=True``) or once on the full data, after which only the
    masked fits run per fold (``reselect=False``, much cheaper). Returns
    the best point and the table, ties going to smaller C, epsilon, k.
    """
    if pipeline not in ("CqrOnly", "ScqrGbd"):
        raise ParameterError(f"unknown pipeline {pipeline!r}")
    if data.n < grid.folds:
        raise ParameterError("fewer samples than folds")
    base = base or QuantileConfig()
    opts = dict(select_options or {})
    parts = fold_indices(data.n, int(grid.folds), seed)
    everything = np.arange(data.n)
    trains = [np.setdiff1d(everything, p) for p in parts]
    with_k = pipeline == "ScqrGbd"
    table: List[dict] = []
    full_oracles: Dict[Tuple[float, float], SubproblemOracle] = {}
    fold_oracles: Dict[Tuple[float, float, int], SubproblemOracle] = {}
    fold_pairs: Dict[int, list] = {}
    for C, eps, k in grid.points(with_k):
        cfg = base.with_(tau=grid.tau, C=C, epsilon=eps)
        losses = []
        chosen = None
        if with_k and not reselect:
            key = (C, eps)
            if key not in full_oracles:
                full_oracles[key] = SubproblemOracle(data, cfg)
            res = select_support(data, cfg, _clip_k(k, data.d), refit=False, oracle=full_oracles[key], **opts)
            chosen = res.support
        for f, (tr, va) in enumerate(zip(trains, parts)):
            dtr, dva = data.subset(tr), data.subset(va)
            if not with_k:
                # pairs generated on this fold by the previous grid point shorten the next fit
                model, _ = fit_cqr(dtr, cfg, initial_pairs=fold_pairs.get(f, ()))
                fold_pairs[f] = list(model.mu)
            elif reselect:
                key = (C, eps, f)
                if key not in fold_oracles:
                    fold_oracles[key] = SubproblemOracle(dtr, cfg)
                res = select_support(dtr, cfg, _clip_k(k, data.d), refit=True, oracle=fold_oracles[key], **opts)
                model = res.model
            else:
                model, _ = fit_cqr(dtr, cfg, mask=chosen)
            losses.append(mae_quantile(model, dva, grid.tau))
        row = {"C": C, "epsilon": eps, "k": k, "fold_losses": losses, "mean_loss": float(np.mean(losses))}
        if chosen is not None:
            row["support"] = list(chosen.indices)
        table.append(row)
    best = min(table, key=lambda r: r["mean_loss"])  # first minimum in tie-break order
    params = {"C": best["C"], "epsilon": best["epsilon"], "k": best["k"], "mean_loss": best["mean_loss"]}
    return params, table


def _clip_k(k: int, d: int) -> int:
    if k > d:
        raise ParameterError(f"k={k} exceeds d={d}")
    return k


# ---------------------------------------------------------------- exhaustive oracle


def enumerate_supports(d: int, k: int) -> Iterable[SupportVector]:
    """All supports with at most ``k`` ones, by size then lexicographically."""
    for size in range(0, k + 1):
        for comb in itertools.combinations(range(d), size):
            yield SupportVector.from_indices(comb, d, k)


def n_supports(d: int, k: int) -> int:
    return sum(math.comb(d, j) for j in range(0, min(k, d) + 1))


def brute_force_subset(data: Dataset, cfg: QuantileConfig, k: int, cap: int = BRUTE_FORCE_CAP,
                       oracle: Optional[SubproblemOracle] = None
                       ) -> Tuple[SupportVector, float, Dict[str, float]]:
    """Evaluate ``g`` on every support with at most ``k`` ones.

    Returns the first minimizer in enumeration order, its value and the
    table keyed by bit strings.
    """
    if not 1 <= k <= data.d:
        raise ParameterError("k must lie in [1, d]")
    count = n_supports(data.d, k)
    if count > cap:
        raise InstanceSizeError(f"{count} supports exceed the enumeration cap {cap}")
    oracle = SubproblemOracle(data, cfg) if oracle is None else oracle
    table: Dict[str, float] = {}
    best, g_best = None, math.inf
    for z in enumerate_supports(data.d, k):
        g = oracle(z).g_value
        table[z.bits()] = g
        if g < g_best:
            best, g_best = z, g
    return best, g_best, table


# ---------------------------------------------------------------- benchmark harness


SUITES = ("Table2", "Table3", "Table4", "QuantileVarying")

# desk-scale defaults; every key may be overridden through ``scale``
DEFAULTS: Dict[str, dict] = {
    "Table2": {
        "dgp": "DgpI", "n": 100, "n_test": 100, "sigma": 1.0, "tau": 0.25, "replicates": 10,
        "C_values": [0.1, 0.5, 1.0, 2.0, 5.0], "eps_values": [0.0, 0.02, 0.2, 1.0, 2.0], "folds": 5,
        "cqr_C": 1e4,
    },
    "Table3": {
        "n": 300, "d": 10, "snr": 3.0, "rho": 0.0, "taus": [0.25, 0.5, 0.75], "C": 1.0,
        "tol": 0.01, "replicates": 1,
    },
    "Table4": {
        "n": 300, "d": 30, "k": 5, "snr": 3.0, "rho": 0.2, "tau": 0.25, "C": 10.0, "epsilon": 0.0,
        "replicates": 5, "gbd_iters": 10, "lsb_iters": 2, "period": 1, "time_limit": 150.0,
    },
    "QuantileVarying": {
        "n": 400, "d": 30, "sigma": 0.5, "rho": 0.2, "taus": [0.5, 0.75], "k_values": [4, 5, 6, 7, 8],
        "C": 10.0, "epsilon": 0.0, "folds": 5, "replicates": 1, "gbd_iters": 6, "lsb_iters": 2,
        "period": 1, "time_limit": 60.0,
    },
}

_TIMING_KEYS = ("run_time", "time_to_incumbent")


@dataclass
class BenchResult:
    """Per-replicate records plus their means.

    Wall-clock fields live in ``run_time`` and ``time_to_incumbent``;
    ``to_csv``/``to_json`` can drop them so that fixed-seed runs are
    byte-identical.
    """

    suite: str
    params: dict
    records: List[dict] = field(default_factory=list)

    def __post_init__(self):
        for r in self.records:
            for key in ("accuracy", "fdr"):
                v = r.get(key)
                if v is not None and not 0.0 <= v <= 1.0:
                    raise ParameterError(f"{key}={v} outside [0, 1]")

    def aggregate(self, timing: bool = True) -> dict:
        out: Dict[str, object] = {}
        keys = self._columns(timing)
        groups: Dict[object, List[dict]] = {}
        for r in self.records:
            groups.setdefault(r.get("tau"), []).append(r)
        for key in keys:
            vals = [r[key] for r in self.records if isinstance(r.get(key), (int, float)) and not isinstance(r.get(key), bool)]
            if vals and key not in ("seed", "tau"):
                out[f"mean_{key}"] = float(np.mean(vals))
        if len(groups) > 1:
            per = {}
            for tau, rows in sorted(groups.items()):
                sub = BenchResult(self.suite, self.params, rows)
                per[str(tau)] = sub.aggregate(timing)
            out["by_tau"] = per
        return out

    def _columns(self, timing: bool) -> List[str]:
        cols: List[str] = []
        for r in self.records:
            for key in r:
                if key not in cols and (timing or key not in _TIMING_KEYS):
                    cols.append(key)
        return cols

    def to_csv(self, timing: bool = True) -> str:
        cols = self._columns(timing)
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in self.records:
            w.writerow({c: _csv_cell(r.get(c)) for c in cols})
        return buf.getvalue()

    def summary(self, timing: bool = True) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "suite": self.suite,
            "params": self.params,
            "replicates": len(self.records),
            "aggregate": self.aggregate(timing),
        }

    def to_json(self, timing: bool = True) -> str:
        body = self.summary(timing)
        body["records"] = [{k: v for k, v in r.items() if timing or k not in _TIMING_KEYS} for r in self.records]
        return json.dumps(body, indent=2, sort_keys=True)


def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, (list, tuple)):
        return " ".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return v


def _resolve(suite: str, scale: Optional[Mapping]) -> dict:
    if suite not in DEFAULTS:
        raise ParameterError(f"unknown suite {suite!r}; expected one of {SUITES}")
    params = dict(DEFAULTS[suite])
    for key, val in (scale or {}).items():
        if key not in params:
            raise ParameterError(f"unknown {suite} parameter {key!r}")
        params[key] = val
    return params


def run_benchmark(suite: str, scale: Optional[Mapping] = None, seeds: Optional[Sequence[int]] = None,
                  workers: int = 1, progress=None) -> BenchResult:
    """Run one experiment protocol and collect per-replicate records.

    ``scale`` overrides entries of ``DEFAULTS[suite]``; ``seeds`` defaults
    to ``range(replicates)``. With ``workers > 1`` replicates run in a
    process pool; records are always ordered by seed.
    """
    params = _resolve(suite, scale)
    seeds = list(range(int(params["replicates"]))) if seeds is None else [int(s) for s in seeds]
    params["seeds"] = seeds
    job = _JOBS[suite]
    if workers > 1 and len(seeds) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=int(workers)) as pool:
            chunks = list(pool.map(job, [params] * len(seeds), seeds))
    else:
        chunks = []
        for s in seeds:
            chunks.append(job(params, s))
            if progress is not None:
                progress(suite, s, chunks[-1])
    records = [r for chunk in chunks for r in chunk]
    return BenchResult(suite, params, records)


def _table2(p: dict, seed: int) -> List[dict]:
    n, m = int(p["n"]), int(p["n_test"])
    data, _ = gen_dgp(DgpSpec(p["dgp"], n=n + m, d=2 if p["dgp"] == "DgpI" else 3, sigma=p["sigma"], seed=seed))
    tr, te = split_indices(n + m, m / (n + m), seed)
    train, test = data.subset(tr), data.subset(te)
    tau = float(p["tau"])
    t0 = time.perf_counter()
    grid = CvGrid(tuple(p["C_values"]), tuple(p["eps_values"]), (1,), int(p["folds"]), tau)
    best, _ = cross_validate(train, grid, "CqrOnly", seed=seed)
    cfg = QuantileConfig(tau=tau, C=best["C"], epsilon=best["epsilon"])
    model, rep = fit_cqr(train, cfg)
    # the unregularized optimum is not unique; a very large C selects its minimum-norm member
    plain, _ = fit_cqr(train, QuantileConfig(tau=tau, C=float(p["cqr_C"])))
    return [{
        "seed": seed,
        "tau": tau,
        "C": best["C"],
        "epsilon": best["epsilon"],
        "mae_in": mae_quantile(model, train, tau),
        "mae_out": mae_quantile(model, test, tau),
        "mae_in_cqr": mae_quantile(plain, train, tau),
        "mae_out_cqr": mae_quantile(plain, test, tau),
        "iterations": rep.iterations,
        "run_time": time.perf_counter() - t0,
    }]


def _table3(p: dict, seed: int) -> List[dict]:
    n, d = int(p["n"]), int(p["d"])
    data, _ = gen_dgp(DgpSpec("QuadraticGaussian", n=n, d=d, snr=p["snr"], rho=p["rho"], seed=seed))
    data = standardize(data)
    rows = []
    for tau in p["taus"]:
        cfg = QuantileConfig(tau=float(tau), C=float(p["C"]), tol=float(p["tol"]))
        model, rep = fit_cqr(data, cfg)
        rows.append({
            "seed": seed,
            "tau": float(tau),
            "n": n,
            "d": d,
            "mae_in": mae_quantile(model, data, float(tau)),
            "primal_infeasibility": rep.primal_infeasibility,
            "iterations": rep.iterations,
            "n_constraints": rep.n_constraints,
            "run_time": rep.wall_time,
        })
    return rows


def _schedule(p: dict) -> LsbSchedule:
    return LsbSchedule(period=int(p["period"]), T=max(int(p["lsb_iters"]), 1))


def _table4(p: dict, seed: int) -> List[dict]:
    n, d, k, tau = int(p["n"]), int(p["d"]), int(p["k"]), float(p["tau"])
    data, truth = gen_dgp(DgpSpec("QuadraticGaussian", n=n, d=d, snr=p["snr"], rho=p["rho"], k=k, seed=seed))
    data = standardize(data)
    cfg = QuantileConfig(tau=tau, C=float(p["C"]), epsilon=float(p["epsilon"]))
    res = select_support(data, cfg, k, gbd_iters=int(p["gbd_iters"]), lsb_iters=int(p["lsb_iters"]),
                         schedule=_schedule(p), time_limit=p["time_limit"])
    sel = res.support.indices
    return [{
        "seed": seed,
        "tau": tau,
        "k": k,
        "true_support": list(truth.support),
        "selected": list(sel),
        "g": res.g_value,
        "accuracy": selection_accuracy(truth.support, sel, k),
        "fdr": fdr(truth.support, sel),
        "mae_in": mae_quantile(res.model, data, tau),
        "iterations": (res.gbd_state if res.lsb_state is None else res.lsb_state).t,
        "n_solves": res.n_solves,
        "run_time": res.wall_time,
        "time_to_incumbent": res.time_to_incumbent,
    }]


def _quantile_varying(p: dict, seed: int) -> List[dict]:
    n, d = int(p["n"]), int(p["d"])
    data, truth = gen_dgp(DgpSpec("QuantileVarying", n=n, d=d, sigma=p["sigma"], rho=p["rho"], seed=seed))
    data = standardize(data)
    opts = {"gbd_iters": int(p["gbd_iters"]), "lsb_iters": int(p["lsb_iters"]),
            "schedule": _schedule(p), "time_limit": p["time_limit"]}
    rows = []
    for tau in p["taus"]:
        tau = float(tau)
        t0 = time.perf_counter()
        grid = CvGrid((float(p["C"]),), (float(p["epsilon"]),), tuple(p["k_values"]), int(p["folds"]), tau)
        best, table = cross_validate(data, grid, "ScqrGbd", seed=seed, select_options=opts, reselect=False)
        row = next(r for r in table if r["k"] == best["k"])
        sel = tuple(row["support"])
        target = truth.median_support if tau == 0.5 else truth.support
        hits = len(set(sel) & set(target))
        cfg = QuantileConfig(tau=tau, C=float(p["C"]), epsilon=float(p["epsilon"]))
        model, _ = fit_cqr(data, cfg, mask=SupportVector.from_indices(sel, d, best["k"]))
        rows.append({
            "seed": seed,
            "tau": tau,
            "k": best["k"],
            "selected": list(sel),
            "target_support": list(target),
            "hits": hits,
            # divided by the selected k, and by the size of the target set
            "accuracy": hits / best["k"],
            "accuracy_target": hits / len(target),
            "fdr": fdr(target, sel),
            "fdr_full": fdr(truth.support, sel),
            "mae_in": mae_quantile(model, data, tau),
            "cv_loss": best["mean_loss"],
            "run_time": time.perf_counter() - t0,
        })
    return rows


_JOBS = {"Table2": _table2, "Table3": _table3, "Table4": _table4, "QuantileVarying": _quantile_varying}
