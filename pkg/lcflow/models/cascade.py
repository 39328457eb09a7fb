from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from ..errors import StepFailure
from ..utils.pool import run_parallel
from .flow import FlowParams, InitialData, RunHistory, run_flow
from .geometry import BackgroundSpec, DivisorKind, WeightTable, conic_shift, weight_table
from .grid import Field, RadialGrid

logger = logging.getLogger(__name__)


class Ordering(str, Enum):
    V = "v"
    EPS_J = "eps_j"
    EPS_K = "eps_k"
    U = "u"
    L = "l"
    JOINT = "joint"


# Direction in which each sequence is meant to run
_DECREASING = ("v_seq", "epsj_seq", "epsk_seq", "u_seq")


@dataclass(frozen=True)
class CascadeSchedule:
    v_seq: tuple[float, ...] = (0.1, 0.05, 0.025, 0.0125)
    epsj_seq: tuple[float, ...] = (0.1, 0.05, 0.025, 0.0125)
    epsk_seq: tuple[float, ...] = (0.1, 0.05, 0.025, 0.0125)
    u_seq: tuple[float, ...] = (0.1, 0.05, 0.025, 0.0125)
    l_seq: tuple[int, ...] = (2, 4, 8)
    snapshot_times: tuple[float, ...] = ()
    joint: bool = True

    def __post_init__(self) -> None:
        for name in _DECREASING:
            seq = tuple(float(x) for x in getattr(self, name))
            if not seq:
                raise ValueError(f"{name} must not be empty")
            if any(x < 0.0 for x in seq):
                raise ValueError(f"{name} entries must be >= 0")
            if any(b > a for a, b in zip(seq, seq[1:])):
                logger.warning("%s is not non-increasing: %s", name, seq)
            object.__setattr__(self, name, seq)
        l_seq = tuple(int(x) for x in self.l_seq)
        if not l_seq or any(x < 1 for x in l_seq):
            raise ValueError("l_seq must hold integers >= 1")
        if any(b < a for a, b in zip(l_seq, l_seq[1:])):
            logger.warning("l_seq is not non-decreasing: %s", l_seq)
        object.__setattr__(self, "l_seq", l_seq)
        object.__setattr__(self, "snapshot_times", tuple(float(t) for t in self.snapshot_times))


@dataclass(frozen=True)
class CascadeTuple:
    v: float
    eps_j: float
    eps_k: float
    u: float
    l_index: int

    @property
    def label(self) -> str:
        return f"v{self.v:g}_ej{self.eps_j:g}_ek{self.eps_k:g}_u{self.u:g}_l{self.l_index}"

    def apply(self, spec: BackgroundSpec) -> BackgroundSpec:
        divisors = []
        for d in spec.divisors:
            if d.kind is DivisorKind.CONIC:
                d = replace(d, epsilon=self.eps_j)
            elif d.kind is DivisorKind.CANONICAL:
                d = replace(d, epsilon=self.eps_k)
            divisors.append(d)
        return replace(spec, v=self.v, u=self.u, divisors=tuple(divisors))


@dataclass(frozen=True)
class Stage:
    ordering: Ordering
    members: tuple[CascadeTuple, ...]


@dataclass(eq=False)
class CascadeRun:
    history: RunHistory
    shift: np.ndarray
    weights: WeightTable


@dataclass(eq=False)
class CascadeResult:
    schedule: CascadeSchedule
    stages: list[Stage]
    runs: dict[CascadeTuple, CascadeRun]
    times: np.ndarray
    limit_estimate: dict[float, Field] = field(default_factory=dict)
    monotonicity_margins: dict[Ordering, float] = field(default_factory=dict)
    stage_differences: dict[Ordering, list[float]] = field(default_factory=dict)

    def stage(self, ordering: Ordering | str) -> Stage:
        ordering = Ordering(ordering)
        for st in self.stages:
            if st.ordering is ordering:
                return st
        raise KeyError(f"cascade has no {ordering.value} stage")

    @property
    def terminal(self) -> CascadeTuple:
        return self.stages[-1].members[-1]

    def cauchy_shrinking(self, ordering: Ordering | str) -> bool:
        diffs = self.stage_differences.get(Ordering(ordering), [])
        return all(b <= a * (1.0 + 1e-9) + 1e-14 for a, b in zip(diffs, diffs[1:]))


def build_stages(schedule: CascadeSchedule, swap_eps: bool = False) -> list[Stage]:
    """Stages in limit order: v, eps_j, eps_k, u, l, then the joint (l, 1/l) limit.

    Each stage varies one parameter with the earlier ones at their terminal
    values and the later ones at their first values.
    """
    current = {
        "v": schedule.v_seq[0],
        "eps_j": schedule.epsj_seq[0],
        "eps_k": schedule.epsk_seq[0],
        "u": schedule.u_seq[0],
        "l_index": schedule.l_seq[0],
    }
    order = [
        (Ordering.V, "v", schedule.v_seq),
        (Ordering.EPS_J, "eps_j", schedule.epsj_seq),
        (Ordering.EPS_K, "eps_k", schedule.epsk_seq),
        (Ordering.U, "u", schedule.u_seq),
        (Ordering.L, "l_index", schedule.l_seq),
    ]
    if swap_eps:
        order[1], order[2] = order[2], order[1]
    stages = []
    for ordering, key, seq in order:
        members = []
        for value in seq:
            current[key] = value
            members.append(CascadeTuple(**current))
        stages.append(Stage(ordering, tuple(members)))
    if schedule.joint and len(schedule.l_seq) > 1:
        members = tuple(
            CascadeTuple(current["v"], current["eps_j"], current["eps_k"], 1.0 / level, level)
            for level in schedule.l_seq
        )
        stages.append(Stage(Ordering.JOINT, members))
    return stages


def _run_one(
    tup: CascadeTuple,
    base: FlowParams,
    grid: RadialGrid,
    initial: InitialData,
    stilde: int | None,
    snapshot_times: tuple[float, ...],
) -> CascadeRun:
    spec = tup.apply(base.background)
    params = replace(
        base, background=spec, l_index=tup.l_index, snapshot_times=snapshot_times, adaptive=False
    )
    weights = weight_table(spec.divisors, grid, stilde, spec.delta)
    u0 = initial.build(tup.l_index, spec, grid)
    try:
        state = run_flow(params, u0, weights, grid)
    except StepFailure as exc:
        exc.params = tup
        raise
    return CascadeRun(RunHistory.from_state(state, params), conic_shift(spec, grid), weights)


def _pair_margin(ordering: Ordering, a: CascadeRun, b: CascadeRun) -> float:
    """Min of the quantity the discrete comparison asserts is >= 0 for a -> b."""
    fa, fb = a.history.fields, b.history.fields
    if ordering is Ordering.EPS_J:
        diff = (fa + a.shift) - (fb + b.shift)
    elif ordering is Ordering.EPS_K:
        diff = fb - fa
    else:
        diff = fa - fb
    return float(np.min(diff))


def check_monotone(result: CascadeResult, ordering: Ordering | str) -> float:
    ordering = Ordering(ordering)
    members = result.stage(ordering).members
    if len(members) < 2:
        raise ValueError(f"{ordering.value} stage has a single member; nothing to compare")
    return min(
        _pair_margin(ordering, result.runs[a], result.runs[b])
        for a, b in zip(members, members[1:])
    )


def limit_extract(result: CascadeResult, snapshot_time: float) -> tuple[Field, float]:
    """Terminal field at a snapshot time plus the last-two-members difference."""
    members = result.stages[-1].members
    last = result.runs[members[-1]].history
    field_t = last.field_at(snapshot_time)
    if len(members) < 2:
        return field_t, math.inf
    prev = result.runs[members[-2]].history.field_at(snapshot_time)
    return field_t, float(np.max(np.abs(field_t.values - prev.values)))


def run_cascade(
    schedule: CascadeSchedule,
    base_params: FlowParams,
    grid: RadialGrid,
    *,
    initial: InitialData | None = None,
    stilde: int | None = None,
    threads: int = 1,
    on_message: Callable[[tuple], None] | None = None,
    swap_eps: bool = False,
) -> CascadeResult:
    initial = initial or InitialData()
    stages = build_stages(schedule, swap_eps=swap_eps)
    unique: list[CascadeTuple] = []
    for st in stages:
        for tup in st.members:
            if tup not in unique:
                unique.append(tup)
    snapshot_times = schedule.snapshot_times or base_params.snapshot_times
    logger.info("Cascade: %d stages, %d distinct runs", len(stages), len(unique))
    jobs = [
        (tup, lambda tup=tup: _run_one(tup, base_params, grid, initial, stilde, snapshot_times))
        for tup in unique
    ]
    outputs = run_parallel(jobs, threads=threads, on_message=on_message)
    runs = dict(zip(unique, outputs))
    times = runs[unique[0]].history.times

    result = CascadeResult(schedule=schedule, stages=stages, runs=runs, times=times)
    for st in stages:
        if len(st.members) < 2:
            continue
        result.monotonicity_margins[st.ordering] = check_monotone(result, st.ordering)
        result.stage_differences[st.ordering] = [
            float(np.max(np.abs(runs[b].history.fields - runs[a].history.fields)))
            for a, b in zip(st.members, st.members[1:])
        ]
    terminal = runs[result.terminal].history
    for i, t in enumerate(times):
        result.limit_estimate[float(t)] = Field(grid, terminal.fields[i])
    return result


def interleaving_report(
    schedule: CascadeSchedule,
    base_params: FlowParams,
    grid: RadialGrid,
    *,
    first: CascadeResult | None = None,
    **kwargs,
) -> dict:
    """Compare limits with the eps_j and eps_k stages taken in either order.

    ``first`` is a finished cascade in the schedule's own order; only the
    swapped one is run when it is given.
    """
    if first is None:
        first = run_cascade(schedule, base_params, grid, **kwargs)
    second = run_cascade(schedule, base_params, grid, swap_eps=True, **kwargs)
    difference = 0.0
    budget = 0.0
    for t in first.times:
        a, tag_a = limit_extract(first, float(t))
        b, tag_b = limit_extract(second, float(t))
        difference = max(difference, float(np.max(np.abs(a.values - b.values))))
        budget = max(budget, tag_a + tag_b)
    for result in (first, second):
        for diffs in result.stage_differences.values():
            if diffs:
                budget += diffs[-1]
    return {
        "limit_difference": difference,
        "richardson_budget": budget,
        "within_budget": difference <= budget,
    }
