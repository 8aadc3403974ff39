"""Command-line front end: ``scqr fit | select | synth | cv | bench | predict``.

Exit codes: 0 success, 2 usage or input error, 3 solver failure.

Every JSON artifact carries ``schema_version``. Wall-clock fields are
left out of artifacts unless ``--timing`` is given, so reruns with the
same inputs and seed write byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .cqr import fit_cqr, predict, quantile_property_check
from .evaluation import (
    SCHEMA_VERSION,
    CvGrid,
    cross_validate,
    fdr,
    mae_quantile,
    run_benchmark,
    selection_accuracy,
)
from .lsb import LsbSchedule, select_support
from .synth import DgpSpec, gen_dgp
from .types import CqrModel, Dataset, ParameterError, QuantileConfig, ScqrError, SolverError, standardize

log = logging.getLogger("scqr")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_SOLVER = 3

TIMING_KEYS = frozenset({"wall_time", "run_time", "time_to_incumbent", "solve_time"})

DGP_ALIASES = {
    "dgp1": "DgpI", "dgpi": "DgpI", "dgp2": "DgpII", "dgpii": "DgpII",
    "quadratic": "QuadraticGaussian", "quadraticgaussian": "QuadraticGaussian",
    "quantile-varying": "QuantileVarying", "quantilevarying": "QuantileVarying",
}
SUITE_ALIASES = {
    "table2": "Table2", "table3": "Table3", "table4": "Table4",
    "quantile-varying": "QuantileVarying", "quantilevarying": "QuantileVarying", "table5": "QuantileVarying",
}


class UsageError(ScqrError):
    """Bad flags, config keys or input files (exit code 2)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------- IO helpers


@dataclass(frozen=True)
class RunConfig:
    """Resolved parameters of one command after merging the config file and flags."""

    command: str
    params: dict
    seed: int
    threads: int

    @classmethod
    def from_args(cls, args: argparse.Namespace, parser: argparse.ArgumentParser) -> "RunConfig":
        params = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
        if args.config:
            try:
                with open(args.config, encoding="utf-8") as fh:
                    file_params = json.load(fh)
            except OSError as exc:
                raise UsageError(f"cannot read config {args.config}: {exc}") from exc
            except json.JSONDecodeError as exc:
                raise UsageError(f"config {args.config} is not valid JSON: {exc}") from exc
            if not isinstance(file_params, dict):
                raise UsageError("config file must hold a JSON object")
            defaults = {a.dest: a.default for a in parser._actions}
            for key, val in file_params.items():
                dest = key.replace("-", "_")
                if dest not in params or dest in ("command",):
                    raise UsageError(f"unknown config key {key!r}")
                # explicit flags win over the file
                if params[dest] == defaults.get(dest):
                    params[dest] = val
        threads = params.get("threads") or _env_threads()
        return cls(args.command, params, int(params.get("seed") or 0), threads)


def _env_threads() -> int:
    raw = os.environ.get("SCQR_THREADS")
    if raw:
        try:
            val = int(raw)
        except ValueError as exc:
            raise UsageError(f"SCQR_THREADS must be an integer, got {raw!r}") from exc
        if val < 1:
            raise UsageError("SCQR_THREADS must be at least 1")
        return val
    return os.cpu_count() or 1


def read_csv(path: str, target: str = "y", require_target: bool = True) -> Tuple[Dataset, Optional[str]]:
    """Read a headed UTF-8 CSV; the ``target`` column becomes ``y``.

    Without a target column (and ``require_target=False``) ``y`` is zero.
    """
    if not os.path.isfile(path):
        raise UsageError(f"input file not found: {path}")
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise UsageError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise UsageError(f"{path}: duplicate column names in header")
    if target not in header and require_target:
        raise UsageError(f"{path}: no column named {target!r} (header: {', '.join(header)})")
    body = rows[1:]
    if len(body) < 2:
        raise UsageError(f"{path}: need at least 2 data rows")
    values = np.empty((len(body), len(header)))
    for r, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise UsageError(f"{path}: row {r} has {len(row)} fields, header has {len(header)}")
        for c, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise UsageError(f"{path}: row {r}, column {c + 1} ({header[c]}): cannot parse {cell!r}") from None
            if not math.isfinite(v):
                raise UsageError(f"{path}: row {r}, column {c + 1} ({header[c]}): non-finite value")
            values[r - 2, c] = v
    if target in header:
        t = header.index(target)
        feats = [i for i in range(len(header)) if i != t]
        y = values[:, t]
    else:
        feats = list(range(len(header)))
        y = np.zeros(len(body))
    if not feats:
        raise UsageError(f"{path}: no feature columns")
    names = tuple(header[i] for i in feats)
    try:
        data = Dataset(values[:, feats], y, feature_names=names)
    except ParameterError as exc:
        raise UsageError(f"{path}: {exc}") from exc
    return data, (target if target in header else None)


def write_csv(path: str, data: Dataset, target: str = "y") -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([target, *data.names()])
        for yi, xi in zip(data.y, data.X):
            w.writerow([repr(float(yi)), *(repr(float(v)) for v in xi)])


def _strip_timing(obj):
    if isinstance(obj, dict):
        return {k: _strip_timing(v) for k, v in obj.items() if k not in TIMING_KEYS}
    if isinstance(obj, list):
        return [_strip_timing(v) for v in obj]
    return obj


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path: str, body: dict, timing: bool = False) -> None:
    body = dict(body)
    body.setdefault("schema_version", SCHEMA_VERSION)
    if not timing:
        body = _strip_timing(body)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(body), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_jsonl(path: str, records: Sequence[dict], timing: bool = False) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            rec = {"schema_version": SCHEMA_VERSION, **rec}
            if not timing:
                rec = _strip_timing(rec)
            fh.write(json.dumps(_jsonable(rec), sort_keys=True) + "\n")


def _check_out(path: Optional[str]) -> None:
    if path:
        parent = os.path.dirname(os.path.abspath(path))
        if not os.path.isdir(parent):
            raise UsageError(f"output directory does not exist: {parent}")


# ---------------------------------------------------------------- model files


def model_to_dict(model: CqrModel, data: Dataset, cfg: QuantileConfig, target: str, report=None) -> dict:
    """JSON body for a fitted model; anchors are stored so predict needs no training data."""
    q_minus, q_plus, holds = quantile_property_check(model, cfg.tau)
    body = {
        "schema_version": SCHEMA_VERSION,
        "kind": "cqr_model",
        "scqr_version": __version__,
        "tau": cfg.tau,
        "C": cfg.C,
        "epsilon": cfg.epsilon,
        "tol": cfg.tol,
        "target": target,
        "feature_names": list(data.names()),
        "theta": model.theta,
        "beta": model.beta,
        "anchors": model.anchors,
        "objective": model.objective,
        "support": None if model.support is None else model.support,
        "quantile_property": {"n_negative": q_minus, "n_positive": q_plus, "holds": holds},
        "standardization": {
            "standardized": bool(data.standardized),
            "centers": data.centers,
            "scales": data.scales,
            "y_center": data.y_center,
            "y_scale": data.y_scale,
        },
    }
    if report is not None:
        body["report"] = report.to_dict()
    return body


def load_model(path: str) -> Tuple[CqrModel, dict]:
    if not os.path.isfile(path):
        raise UsageError(f"model file not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            body = json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}") from exc
    if body.get("kind") != "cqr_model" or "schema_version" not in body:
        raise UsageError(f"{path} is not a model file")
    if int(body["schema_version"]) > SCHEMA_VERSION:
        raise UsageError(f"{path} has schema_version {body['schema_version']}, newer than {SCHEMA_VERSION}")
    n = len(body["theta"])
    model = CqrModel(
        theta=np.asarray(body["theta"], float),
        beta=np.asarray(body["beta"], float),
        xi=np.zeros(n),
        xi_star=np.zeros(n),
        anchors=np.asarray(body["anchors"], float),
        objective=float(body["objective"]),
        tau=float(body["tau"]),
    )
    return model, body


def predict_raw(model: CqrModel, body: dict, X_raw: np.ndarray) -> np.ndarray:
    """Predict in original units for raw feature rows."""
    st = body["standardization"]
    X = np.atleast_2d(np.asarray(X_raw, float))
    if st["standardized"]:
        X = (X - np.asarray(st["centers"], float)) / np.asarray(st["scales"], float)
    out = np.asarray(predict(model, X), float).reshape(-1)
    if st["standardized"]:
        out = out * float(st["y_scale"]) + float(st["y_center"])
    return out


def _cfg(p: dict, **extra) -> QuantileConfig:
    try:
        return QuantileConfig(tau=float(p["tau"]), C=float(p["C"]), epsilon=float(p["eps"]),
                              tol=float(p.get("tol") or 1e-6), **extra)
    except ParameterError as exc:
        raise UsageError(str(exc)) from exc


def _maybe_standardize(data: Dataset, flag: bool) -> Dataset:
    if not flag:
        return data
    try:
        return standardize(data)
    except ParameterError as exc:
        raise UsageError(f"cannot standardize: {exc}") from exc


def _read_truth(path: str, names: Sequence[str]) -> List[int]:
    if not os.path.isfile(path):
        raise UsageError(f"truth file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        body = json.load(fh)
    sup = body.get("support") if isinstance(body, dict) else body
    if sup is None:
        raise UsageError(f"{path}: no 'support' entry")
    out = []
    for s in sup:
        if isinstance(s, str):
            if s not in names:
                raise UsageError(f"{path}: unknown feature {s!r}")
            out.append(list(names).index(s))
        else:
            out.append(int(s))
    return out


# ---------------------------------------------------------------- commands


def cmd_fit(rc: RunConfig) -> int:
    p = rc.params
    _check_out(p["out"])
    data, target = read_csv(p["input"], p["target"])
    data = _maybe_standardize(data, p["standardize"])
    cfg = _cfg(p)
    model, report = fit_cqr(data, cfg)
    mae = mae_quantile(model, data, cfg.tau)
    q_minus, q_plus, holds = quantile_property_check(model, cfg.tau)
    print(f"MAE(in) = {mae:.6g}")
    print(f"primal infeasibility = {report.primal_infeasibility:.6g}")
    print(f"quantile property: {q_minus} negative, {q_plus} positive of {data.n} (holds: {holds})")
    print(f"iterations = {report.iterations}, wall time = {report.wall_time:.3f}s")
    if p["out"]:
        write_json(p["out"], model_to_dict(model, data, cfg, target, report), timing=p["timing"])
    return EXIT_OK


def cmd_select(rc: RunConfig) -> int:
    p = rc.params
    _check_out(p["out"])
    _check_out(p["log"])
    _check_out(p["model_out"])
    data, target = read_csv(p["input"], p["target"])
    k = int(p["k"])
    if not 1 <= k <= data.d:
        raise UsageError(f"--k must lie in [1, {data.d}], got {k}")
    if int(p["gbd_iters"]) < 1:
        raise UsageError("--gbd-iters must be at least 1")
    if int(p["lsb_iters"]) < 0:
        raise UsageError("--lsb-iters must be nonnegative")
    truth = _read_truth(p["truth"], data.names()) if p["truth"] else None
    data = _maybe_standardize(data, p["standardize"])
    cfg = _cfg(p)
    try:
        schedule = LsbSchedule(period=int(p["period"]), T=max(int(p["lsb_iters"]), 1))
    except ParameterError as exc:
        raise UsageError(str(exc)) from exc
    res = select_support(data, cfg, k, gbd_iters=int(p["gbd_iters"]), lsb_iters=int(p["lsb_iters"]),
                         warm=p["warm"], schedule=schedule, time_limit=p["time_limit"])
    names = data.names()
    sel = list(res.support.indices)
    hist = res.gbd_state.history if res.lsb_state is None else res.lsb_state.history
    body = {
        "kind": "selection",
        "tau": cfg.tau, "C": cfg.C, "epsilon": cfg.epsilon, "k": k,
        "selected": sel,
        "selected_names": [names[j] for j in sel],
        "support_bits": res.support.bits(),
        "g": res.g_value,
        "lsb_skipped": res.lsb_state is None,
        "bounds": [{"t": h.get("t"), "UB": h.get("UB"), "LB": h.get("LB"), "phase": h.get("phase", "gbd")}
                   for h in hist],
        "iterations": res.log,
        "summary": res.to_dict(),
    }
    print(f"selected = {[names[j] for j in sel]} (g = {res.g_value:.8g})")
    print(f"solves = {res.n_solves}, wall time = {res.wall_time:.2f}s, "
          f"time to incumbent = {res.time_to_incumbent:.2f}s, lsb = {'skipped' if res.lsb_state is None else 'run'}")
    if truth is not None:
        acc, rate = selection_accuracy(truth, sel, k), fdr(truth, sel)
        body["truth"] = sorted(truth)
        body["accuracy"], body["fdr"] = acc, rate
        print(f"accuracy = {acc:.3f}, FDR = {rate:.3f}")
    if p["out"]:
        write_json(p["out"], body, timing=p["timing"])
    if p["log"]:
        write_jsonl(p["log"], res.log, timing=p["timing"])
    if p["model_out"]:
        write_json(p["model_out"], model_to_dict(res.model, data, cfg, target), timing=p["timing"])
    return EXIT_OK


def cmd_synth(rc: RunConfig) -> int:
    p = rc.params
    _check_out(p["out"])
    kind = DGP_ALIASES.get(p["dgp"].lower(), p["dgp"])
    opt = {key: p[key] for key in ("sigma", "snr", "k") if p[key] is not None}
    if "sigma" not in opt and "snr" not in opt:
        opt["sigma"] = 1.0
    d = p["d"] if p["d"] is not None else {"DgpI": 2, "DgpII": 3, "QuantileVarying": 30}.get(kind, 10)
    try:
        spec = DgpSpec(kind, n=int(p["n"]), d=int(d), rho=float(p["rho"]), seed=rc.seed, **opt)
    except (ParameterError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    data, truth = gen_dgp(spec)
    write_csv(p["out"], data)
    if p["truth_out"]:
        write_json(p["truth_out"], {"kind": "truth", "dgp": spec.kind.value, "seed": rc.seed, **truth.to_dict()})
    print(f"wrote {data.n} rows x {data.d} features to {p['out']}")
    return EXIT_OK


def _floats(s: str) -> Tuple[float, ...]:
    try:
        return tuple(float(v) for v in str(s).split(",") if v.strip())
    except ValueError as exc:
        raise UsageError(f"cannot parse list {s!r}") from exc


def _ints(s: str) -> Tuple[int, ...]:
    out = []
    for part in str(s).split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if ".." in part:
                lo, hi = part.split("..")
                out.extend(range(int(lo), int(hi) + 1))
            else:
                out.append(int(part))
        except ValueError as exc:
            raise UsageError(f"cannot parse integer list {s!r}") from exc
    return tuple(out)


def cmd_cv(rc: RunConfig) -> int:
    p = rc.params
    _check_out(p["out"])
    data, _ = read_csv(p["input"], p["target"])
    pipeline = {"cqr": "CqrOnly", "scqr": "ScqrGbd"}.get(p["pipeline"].lower(), p["pipeline"])
    data = _maybe_standardize(data, p["standardize"] if p["standardize"] is not None else pipeline == "ScqrGbd")
    try:
        grid = CvGrid(_floats(p["C_values"]), _floats(p["eps_values"]), _ints(p["k_values"]),
                      int(p["folds"]), float(p["tau"]))
        if pipeline == "ScqrGbd" and max(grid.k_values) > data.d:
            raise UsageError(f"k values exceed d={data.d}")
        opts = {"gbd_iters": int(p["gbd_iters"]), "lsb_iters": int(p["lsb_iters"])}
        best, table = cross_validate(data, grid, pipeline, seed=rc.seed, select_options=opts,
                                     reselect=not p["no_reselect"])
    except ParameterError as exc:
        raise UsageError(str(exc)) from exc
    print("best: " + ", ".join(f"{k}={v}" for k, v in best.items()))
    if p["out"]:
        write_json(p["out"], {"kind": "cv", "pipeline": pipeline, "folds": grid.folds, "seed": rc.seed,
                              "best": best, "table": table})
    return EXIT_OK


def _overrides(items: Sequence[str]) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            out[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            out[key.strip()] = raw
    return out


def cmd_bench(rc: RunConfig) -> int:
    p = rc.params
    for path in (p["out_csv"], p["out_json"], p["log"]):
        _check_out(path)
    suite = SUITE_ALIASES.get(p["suite"].lower(), p["suite"])
    scale = _overrides(p["set"])
    if p["replicates"] is not None:
        scale["replicates"] = int(p["replicates"])
    seeds = None
    if p["seeds"]:
        seeds = _ints(p["seeds"])
    elif rc.seed:
        reps = int(scale.get("replicates", 0)) or None
        seeds = None if reps is None else tuple(range(rc.seed, rc.seed + reps))
    try:
        result = run_benchmark(suite, scale, seeds, workers=rc.threads if p["parallel"] else 1)
    except ParameterError as exc:
        raise UsageError(str(exc)) from exc
    summary = result.summary(timing=p["timing"])
    for key, val in sorted(summary["aggregate"].items()):
        if not isinstance(val, dict):
            print(f"{key} = {val:.6g}")
    if p["out_csv"]:
        with open(p["out_csv"], "w", encoding="utf-8", newline="") as fh:
            fh.write(result.to_csv(timing=p["timing"]))
    if p["out_json"]:
        write_json(p["out_json"], {"kind": "bench", **summary}, timing=p["timing"])
    if p["log"]:
        write_jsonl(p["log"], result.records, timing=p["timing"])
    return EXIT_OK


def cmd_predict(rc: RunConfig) -> int:
    p = rc.params
    _check_out(p["out"])
    model, body = load_model(p["model"])
    names = body["feature_names"]
    if p["point"] is not None:
        X = np.asarray([_floats(p["point"])])
        if X.shape[1] != len(names):
            raise UsageError(f"--point has {X.shape[1]} values, model expects {len(names)}")
    elif p["input"]:
        data, _ = read_csv(p["input"], body.get("target") or "y", require_target=False)
        missing = [nm for nm in names if nm not in data.names()]
        if missing:
            raise UsageError(f"{p['input']}: missing feature columns {missing}")
        order = [data.names().index(nm) for nm in names]
        X = data.X[:, order]
    else:
        raise UsageError("give an input CSV or --point")
    preds = predict_raw(model, body, X)
    if p["out"]:
        with open(p["out"], "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["prediction"])
            for v in preds:
                w.writerow([repr(float(v))])
    else:
        for v in preds:
            print(repr(float(v)))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", help="JSON file with parameters (keys as flag names)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--threads", type=int, default=None, help="parallelism degree (default: SCQR_THREADS or cores)")
    sp.add_argument("--timing", action="store_true", help="keep wall-clock fields in artifacts")
    sp.add_argument("-v", "--verbose", action="count", default=0)


def _model_flags(sp: argparse.ArgumentParser, tol: bool = True) -> None:
    sp.add_argument("--target", default="y", help="response column name")
    sp.add_argument("--tau", type=float, default=0.5)
    sp.add_argument("--C", type=float, default=1.0)
    sp.add_argument("--eps", type=float, default=0.0)
    if tol:
        sp.add_argument("--tol", type=float, default=1e-6, help="separation tolerance")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="scqr", description="Sparse convex quantile regression.")
    ap.add_argument("--version", action="version", version=f"scqr {__version__}")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    sp = sub.add_parser("fit", help="fit a CQR model")
    sp.add_argument("input")
    _model_flags(sp)
    sp.add_argument("--standardize", action="store_true")
    sp.add_argument("--out")
    _common(sp)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("select", help="select k features by Benders decomposition and local search")
    sp.add_argument("input")
    _model_flags(sp)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--gbd-iters", type=int, default=80)
    sp.add_argument("--lsb-iters", type=int, default=300)
    sp.add_argument("--period", type=int, default=30, help="iterations per radius")
    sp.add_argument("--warm", default="OneShot", choices=["OneShot", "Relaxation"])
    sp.add_argument("--time-limit", type=float, default=None)
    sp.add_argument("--no-standardize", dest="standardize", action="store_false")
    sp.add_argument("--truth", help="JSON file with the true support")
    sp.add_argument("--out")
    sp.add_argument("--log", help="iteration log (JSONL)")
    sp.add_argument("--model-out", help="write the refitted model here")
    _common(sp)
    sp.set_defaults(func=cmd_select)

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    sp.add_argument("dgp", help="dgp1, dgp2, quadratic or quantile-varying")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--d", type=int, default=None)
    sp.add_argument("--sigma", type=float, default=None)
    sp.add_argument("--snr", type=float, default=None)
    sp.add_argument("--rho", type=float, default=0.0)
    sp.add_argument("--k", type=int, default=None)
    sp.add_argument("--out", required=True)
    sp.add_argument("--truth-out")
    _common(sp)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("cv", help="k-fold cross-validation over a grid")
    sp.add_argument("input")
    sp.add_argument("--target", default="y")
    sp.add_argument("--pipeline", default="cqr", help="cqr or scqr")
    sp.add_argument("--tau", type=float, default=0.5)
    sp.add_argument("--C-values", dest="C_values", default="0.1,0.5,1,2,5")
    sp.add_argument("--eps-values", default="0,0.02,0.2,1,2")
    sp.add_argument("--k-values", default="1")
    sp.add_argument("--folds", type=int, default=5)
    sp.add_argument("--gbd-iters", type=int, default=80)
    sp.add_argument("--lsb-iters", type=int, default=0)
    sp.add_argument("--no-reselect", action="store_true", help="select once on all data, then cross-validate fits")
    sp.add_argument("--standardize", action="store_true", default=None)
    sp.add_argument("--out")
    _common(sp)
    sp.set_defaults(func=cmd_cv)

    sp = sub.add_parser("bench", help="run a Monte Carlo benchmark suite")
    sp.add_argument("suite", help="table2, table3, table4 or quantile-varying")
    sp.add_argument("--replicates", type=int, default=None)
    sp.add_argument("--seeds", default=None, help="comma list or lo..hi")
    sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a suite parameter")
    sp.add_argument("--parallel", action="store_true", help="run replicates in a process pool")
    sp.add_argument("--out-csv")
    sp.add_argument("--out-json")
    sp.add_argument("--log", help="per-replicate records (JSONL)")
    _common(sp)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("predict", help="evaluate a saved model")
    sp.add_argument("input", nargs="?")
    sp.add_argument("--model", required=True)
    sp.add_argument("--point", default=None, help="comma-separated raw feature values")
    sp.add_argument("--out")
    _common(sp)
    sp.set_defaults(func=cmd_predict)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        level = logging.WARNING - 10 * min(int(getattr(args, "verbose", 0) or 0), 2)
        logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        rc = RunConfig.from_args(args, sub)
        return args.func(rc)
    except UsageError as exc:
        print(f"scqr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SolverError as exc:
        print(f"scqr: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ParameterError, ValueError) as exc:
        print(f"scqr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"scqr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
