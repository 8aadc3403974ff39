"""Local search around the incumbent support with restricted Benders runs.

Each outer iteration runs Benders decomposition inside the Hamming ball
``N(z*, r)`` until its gap closes, moves the center on strict improvement
and advances the radius schedule. All cuts go into one pool because
every Benders cut is valid on the whole support set.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

from .benders import BendersCut, GbdState, SubproblemOracle, run_gbd
from .types import CqrModel, Dataset, ParameterError, QuantileConfig, SupportVector

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LsbSchedule:
    """Radius schedule and stopping rule.

    The radius cycles through ``radii``, holding each value for ``period``
    outer iterations. The search stops after ``T`` outer iterations or
    after ``stall_limit`` consecutive iterations without improvement
    (default: two full periods).
    """

    radii: Tuple[int, ...] = (1, 2)
    period: int = 30
    T: int = 300
    stall_limit: Optional[int] = None

    def __post_init__(self):
        radii = tuple(int(r) for r in self.radii)
        if not radii or any(r < 1 for r in radii):
            raise ParameterError("radii must be a nonempty list of integers >= 1")
        if int(self.period) < 1:
            raise ParameterError("period must be at least 1")
        if int(self.T) < 1:
            raise ParameterError("T must be at least 1")
        if self.stall_limit is not None and int(self.stall_limit) < 1:
            raise ParameterError("stall_limit must be at least 1")
        object.__setattr__(self, "radii", radii)

    @property
    def stall(self) -> int:
        return 2 * self.period if self.stall_limit is None else int(self.stall_limit)

    def radius(self, t: int) -> int:
        return self.radii[(t // self.period) % len(self.radii)]


def run_lsb(data: Dataset, cfg: QuantileConfig, k: int, start: SupportVector,
            schedule: Optional[LsbSchedule] = None, inherited_cuts: Sequence[BendersCut] = (),
            oracle: Optional[SubproblemOracle] = None, gap_tol: float = 1e-6,
            base_state: Optional[GbdState] = None, on_record: Optional[Callable[[dict], None]] = None,
            time_limit: Optional[float] = None, max_inner: int = 10000,
            clock_start: Optional[float] = None) -> Tuple[SupportVector, GbdState]:
    """Refine ``start`` by Benders runs restricted to Hamming balls.

    Returns the best support and a state holding the merged cut pool and
    one history record per outer iteration (with its radius). When
    ``base_state`` is given its bounds and history are carried over.
    """
    if start.z.sum() > k:
        raise ParameterError("start support has more than k ones")
    schedule = schedule or LsbSchedule()
    t0 = time.perf_counter() if clock_start is None else clock_start
    oracle = SubproblemOracle(data, cfg) if oracle is None else oracle
    start = SupportVector(start.z, k)
    state = GbdState(d=data.d, k=k)
    if base_state is not None:
        for c in base_state.cuts:
            state.add_cut(c)
        state.LB = base_state.LB
        state.history = list(base_state.history)
        state.time_to_incumbent = base_state.time_to_incumbent
        state.t = base_state.t
    for c in inherited_cuts:
        state.add_cut(c)
    ev = oracle(start)
    state.add_cut(ev.cut)
    center, g_center = start, ev.g_value
    if base_state is not None and base_state.incumbent is not None and base_state.incumbent_g <= g_center:
        center, g_center = SupportVector(base_state.incumbent.z, k), base_state.incumbent_g
    else:
        state.time_to_incumbent = time.perf_counter() - t0
    state.incumbent, state.incumbent_g = center, g_center
    state.UB = min(state.UB, g_center)
    searched = set()
    stall = 0
    for t in range(schedule.T):
        r = schedule.radius(t)
        key = (center.bits(), r)
        if key in searched:
            # same center and radius: the closed neighborhood has nothing new
            stall += 1
            rec = _record(state, t, center, g_center, r, 0, t0, skipped=True)
        else:
            extra = {"phase": "lsb", "outer_t": t, "radius": r}
            inner, _ = run_gbd(data, cfg, k, T=max_inner, gap_tol=gap_tol, z0=center, oracle=oracle,
                               cuts=state.cuts, restriction=(center, r), on_record=on_record,
                               refit=False, extra=extra, time_limit=time_limit, clock_start=t0)
            for c in inner.cuts:
                state.add_cut(c)
            searched.add(key)
            if inner.incumbent_g < g_center:
                center, g_center = inner.incumbent, inner.incumbent_g
                state.incumbent, state.incumbent_g = center, g_center
                state.UB = min(state.UB, g_center)
                state.time_to_incumbent = inner.time_to_incumbent
                stall = 0
            else:
                stall += 1
            rec = _record(state, t, center, g_center, r, inner.t, t0, skipped=False)
        state.history.append(rec)
        state.t += 1
        log.debug("lsb %d: r=%d g*=%.6g", t, r, g_center)
        if stall >= schedule.stall:
            break
        if time_limit is not None and time.perf_counter() - t0 > time_limit:
            break
    state.wall_time = time.perf_counter() - t0
    return center, state


def _record(state, t, center, g, r, inner_iters, t0, skipped):
    return {
        "phase": "lsb",
        "t": state.t,
        "outer_t": t,
        "z": center.bits(),
        "g": g,
        "radius": r,
        "UB": state.UB,
        "LB": state.LB if math.isfinite(state.LB) else None,
        "incumbent_g": state.incumbent_g,
        "inner_iterations": inner_iters,
        "skipped": skipped,
        "wall_time": time.perf_counter() - t0,
    }


@dataclass
class SelectionResult:
    """Outcome of the warm start, GBD and LSB pipeline."""

    support: SupportVector
    g_value: float
    gbd_state: GbdState
    lsb_state: Optional[GbdState]
    model: Optional[CqrModel]
    time_to_incumbent: float
    wall_time: float
    n_solves: int
    log: List[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "support": self.support.bits(),
            "selected": list(self.support.indices),
            "g": self.g_value,
            "gbd": self.gbd_state.summary(),
            "lsb": None if self.lsb_state is None else self.lsb_state.summary(),
            "time_to_incumbent": self.time_to_incumbent,
            "wall_time": self.wall_time,
            "n_solves": self.n_solves,
        }


def select_support(data: Dataset, cfg: QuantileConfig, k: int, gbd_iters: int = 80, lsb_iters: int = 300,
                   warm="OneShot", schedule: Optional[LsbSchedule] = None, gap_tol: float = 1e-6,
                   refit: bool = True, oracle: Optional[SubproblemOracle] = None,
                   time_limit: Optional[float] = None) -> SelectionResult:
    """Warm start, ``gbd_iters`` Benders iterations, then LSB (skipped when ``lsb_iters == 0``)."""
    if not 1 <= k:
        raise ParameterError("k must be at least 1")
    t0 = time.perf_counter()
    oracle = SubproblemOracle(data, cfg) if oracle is None else oracle
    records: List[dict] = []
    gbd_state, _ = run_gbd(data, cfg, k, T=max(int(gbd_iters), 1), gap_tol=gap_tol, warm=warm, oracle=oracle,
                           on_record=records.append, refit=False, extra={"phase": "gbd"},
                           time_limit=time_limit, clock_start=t0)
    best, g_best = gbd_state.incumbent, gbd_state.incumbent_g
    tti = gbd_state.time_to_incumbent
    lsb_state = None
    if lsb_iters > 0 and not gbd_state.converged:
        base = schedule or LsbSchedule()
        sched = LsbSchedule(base.radii, base.period, int(lsb_iters), base.stall_limit)
        best, lsb_state = run_lsb(data, cfg, k, best, sched, oracle=oracle, gap_tol=gap_tol,
                                  base_state=gbd_state, on_record=records.append,
                                  time_limit=time_limit, clock_start=t0)
        g_best = lsb_state.incumbent_g
        tti = lsb_state.time_to_incumbent
    model = oracle.model(best) if refit else None
    return SelectionResult(best, g_best, gbd_state, lsb_state, model, tti, time.perf_counter() - t0,
                           oracle.n_solves, records)
