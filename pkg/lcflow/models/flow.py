"""Implicit time stepping of the reduced Monge-Ampere flow.

The unknown reported to callers is u = phi', the correction to the
background. Internally the solver works with psi = u + eta * sum F, the
conic-shifted potential: boundary data apply to psi, the conic part of the
background cancels from the metric coefficient exactly, and

    m(psi)  = A_ss^smooth(t) + D^2 psi
    rhs     = log m - s + log_weight  [- psi when normalized]
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Iterable
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import NamedTuple

import numpy as np

from ..errors import NonPositiveMetric, StepFailure
from ..utils.linalg import solve_tridiagonal
from .geometry import BackgroundFamily, BackgroundSpec, WeightTable, background_family
from .grid import Field, RadialGrid, boundary_laplacian, laplacian_bands

logger = logging.getLogger(__name__)

# Adaptive control targets (only used when FlowParams.adaptive is set)
_SLOW_NEWTON = 8
_FAST_NEWTON = 3
_MIN_LINE_SEARCH = 2.0**-30


class InitialKind(str, Enum):
    ZERO = "zero"
    SMOOTH = "smooth"
    POLE = "pole"


@dataclass(frozen=True)
class FlowParams:
    background: BackgroundSpec
    l_index: int = 1
    normalized: bool = False
    t_end: float = 1.0
    dt_init: float = 1e-4
    newton_tol: float = 1e-10
    max_newton: int = 50
    dt_max: float = 0.05
    dt_growth: float = 1.2
    adaptive: bool = False
    max_halvings: int = 20
    snapshot_times: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "snapshot_times", tuple(float(t) for t in self.snapshot_times))
        if not self.t_end > 0.0:
            raise ValueError(f"t_end={self.t_end} must be > 0")
        if not self.dt_init > 0.0:
            raise ValueError(f"dt_init={self.dt_init} must be > 0")
        if not 0.0 < self.newton_tol <= 1e-6:
            raise ValueError(f"newton_tol={self.newton_tol} must lie in (0, 1e-6]")
        if self.l_index < 1:
            raise ValueError(f"l_index={self.l_index} must be >= 1")
        if self.max_newton < 1 or self.max_halvings < 0:
            raise ValueError("max_newton must be >= 1 and max_halvings >= 0")
        if self.dt_growth < 1.0 or not self.dt_max > 0.0:
            raise ValueError("dt_growth must be >= 1 and dt_max > 0")
        if any(t < 0.0 for t in self.snapshot_times):
            raise ValueError("snapshot times must be >= 0")


class DiagnosticsRow(NamedTuple):
    t: float
    sup_u: float
    inf_u: float
    sup_udot: float
    inf_udot: float
    min_metric: float


@dataclass
class FlowHistory:
    """Per-run record appended only by the worker that owns the run."""

    rows: list[DiagnosticsRow] = field(default_factory=list)
    snapshots: dict[float, np.ndarray] = field(default_factory=dict)
    rates: dict[float, np.ndarray] = field(default_factory=dict)
    metrics: dict[float, np.ndarray] = field(default_factory=dict)
    steps: int = 0
    rejected_steps: int = 0
    max_newton_iters: int = 0


@dataclass(frozen=True, eq=False)
class FlowState:
    u: Field
    t: float = 0.0
    step_count: int = 0
    udot: np.ndarray | None = None
    history: FlowHistory = field(default_factory=FlowHistory)

    @property
    def diagnostics(self) -> list[DiagnosticsRow]:
        return self.history.rows


class StepReport(NamedTuple):
    accepted: bool
    newton_iters: int
    residual: float
    dt_used: float


class _Problem:
    """Everything a step needs that does not change along a run."""

    def __init__(self, params: FlowParams, grid: RadialGrid, weights: WeightTable):
        self.params = params
        self.grid = grid
        self.family: BackgroundFamily = background_family(
            replace(params.background, t=0.0), grid
        )
        self.shift = self.family.conic
        self.s = grid.nodes
        self.log_weight = weights.log_weight.values
        self.lo, self.hi = grid.free_range
        self.bands = laplacian_bands(grid)

    def metric(self, psi: np.ndarray, t: float) -> np.ndarray:
        _, a_ss = self.family.smooth_part(t, self.params.normalized)
        return a_ss + boundary_laplacian(psi, self.grid)

    def velocity(self, psi: np.ndarray, m: np.ndarray) -> np.ndarray:
        """Right-hand side on free nodes, zero on held nodes."""
        lo, hi = self.lo, self.hi
        out = np.zeros_like(psi)
        out[lo:hi] = np.log(m[lo:hi]) - self.s[lo:hi] + self.log_weight[lo:hi]
        if self.params.normalized:
            out[lo:hi] -= psi[lo:hi]
        return out

    def check_positive(self, m: np.ndarray) -> None:
        free = m[self.lo:self.hi]
        if free.size and np.min(free) <= 0.0:
            i = self.lo + int(np.argmin(free))
            raise NonPositiveMetric(i, float(self.s[i]), float(m[i]))

    def min_metric(self, m: np.ndarray) -> float:
        return float(np.min(m[self.lo:self.hi]))


def _smooth_profile(grid: RadialGrid, amplitude: float) -> np.ndarray:
    # a|z|^2, smooth across the puncture
    return amplitude * np.exp(grid.nodes)


def make_initial(
    kind: InitialKind | str,
    l_index: int,
    background: BackgroundSpec,
    grid: RadialGrid,
    *,
    field: Field | None = None,
    c: float = 3.0,
    amplitude: float = 1.0,
) -> Field:
    """phi_{l,0} - eta * sum F for the requested initial potential."""
    kind = InitialKind(kind)
    s = grid.nodes
    if kind is InitialKind.ZERO:
        phi0 = np.zeros(grid.n_nodes)
    elif kind is InitialKind.SMOOTH:
        phi0 = np.array(field.values) if field is not None else _smooth_profile(grid, amplitude)
    else:
        if not c > 0.0:
            raise ValueError(f"pole strength c={c} must be > 0")
        if l_index < 1:
            raise ValueError(f"l_index={l_index} must be >= 1")
        phi0 = np.maximum(-c * np.log(-s), -float(l_index))

    family = background_family(replace(background, t=0.0), grid)
    _, a_ss = family.smooth_part(0.0)
    m0 = a_ss + boundary_laplacian(phi0, grid)
    lo, hi = grid.free_range
    if np.min(m0[lo:hi]) <= 0.0:
        i = lo + int(np.argmin(m0[lo:hi]))
        raise ValueError(
            f"initial potential is not quasi-plurisubharmonic: A_ss(0) + f_ss = "
            f"{m0[i]:.3e} at s={s[i]:.6g}"
        )
    return Field(grid, phi0 - family.conic)


def ma_rhs(state: FlowState, params: FlowParams, weights: WeightTable) -> Field:
    prob = _Problem(params, state.u.grid, weights)
    psi = state.u.values + prob.shift
    m = prob.metric(psi, state.t)
    prob.check_positive(m)
    return state.u.with_values(prob.velocity(psi, m))


def metric_coefficient(state: FlowState, params: FlowParams, weights: WeightTable) -> Field:
    """A_ss(t) + u_ss, the coefficient of the evolving metric against i dz^dz-bar/|z|^2."""
    prob = _Problem(params, state.u.grid, weights)
    return state.u.with_values(prob.metric(state.u.values + prob.shift, state.t))


def _newton(
    prob: _Problem, psi_old: np.ndarray, t_new: float, dt: float
) -> tuple[np.ndarray | None, int, float, int]:
    """Solve psi - psi_old - dt*rhs(psi, t_new) = 0 on free nodes.

    Works in the increment w = psi - psi_old so that roundoff in D^2 psi_old
    is frozen into the problem instead of stalling the iteration.
    Returns (psi or None, iterations, residual, worst node).
    """
    params = prob.params
    lo, hi = prob.lo, prob.hi
    grid = prob.grid
    m_base = prob.metric(psi_old, t_new)
    lower, diag, upper = prob.bands
    norm_shift = 1.0 if params.normalized else 0.0

    def evaluate(w: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
        m = m_base + boundary_laplacian(w, grid)
        if np.min(m[lo:hi]) <= 0.0:
            return m, None
        r = w - dt * prob.velocity(psi_old + w, m)
        r[:lo] = 0.0
        r[hi:] = 0.0
        return m, r

    w = np.zeros_like(psi_old)
    m, r = evaluate(w)
    if r is None:
        prob.check_positive(m)
    res = float(np.max(np.abs(r)))
    iters = 0
    polished = False
    while iters < params.max_newton:
        if res <= params.newton_tol and (polished or res <= 1e-3 * params.newton_tol):
            break
        iters += 1
        coef = dt / m[lo:hi]
        j_diag = 1.0 - coef * diag[lo:hi] + norm_shift * dt
        j_lower = -coef * lower[lo:hi]
        j_upper = -coef * upper[lo:hi]
        dw = np.zeros_like(w)
        dw[lo:hi] = solve_tridiagonal(j_lower, j_diag, j_upper, -r[lo:hi])
        converged = res <= params.newton_tol
        lam = 1.0
        while lam >= _MIN_LINE_SEARCH:
            trial = w + lam * dw
            m_try, r_try = evaluate(trial)
            if r_try is not None:
                res_try = float(np.max(np.abs(r_try)))
                if res_try <= (1.0 - 1e-4 * lam) * res or (converged and res_try <= res):
                    w, m, r, res = trial, m_try, r_try, res_try
                    break
            lam *= 0.5
        else:
            if converged:
                break
            return None, iters, res, int(np.argmax(np.abs(r)))
        logger.debug("Newton it %d: residual %.3e (step %.3g)", iters, res, lam)
        if converged:
            polished = True
    worst = int(np.argmax(np.abs(r)))
    if res > params.newton_tol:
        return None, iters, res, worst
    return psi_old + w, iters, res, worst


def implicit_step(
    state: FlowState, dt: float, params: FlowParams, weights: WeightTable,
    _problem: _Problem | None = None,
) -> tuple[FlowState, StepReport]:
    """One implicit Euler step with damped Newton, halving dt on failure."""
    prob = _problem or _Problem(params, state.u.grid, weights)
    psi_old = state.u.values + prob.shift
    trial_dt = dt
    halvings = 0
    while True:
        t_new = state.t + trial_dt
        psi, iters, res, worst = _newton(prob, psi_old, t_new, trial_dt)
        if psi is not None:
            break
        if halvings >= params.max_halvings:
            raise StepFailure(state.t, trial_dt, worst, float(prob.s[worst]))
        halvings += 1
        trial_dt *= 0.5
        logger.warning(
            "Newton failed at t=%.6g (residual %.3e); halving dt to %.3e", state.t, res, trial_dt
        )

    m = prob.metric(psi, t_new)
    rate = prob.velocity(psi, m)
    history = state.history
    history.steps += 1
    history.rejected_steps += halvings
    history.max_newton_iters = max(history.max_newton_iters, iters)
    u_new = psi - prob.shift
    lo, hi = prob.lo, prob.hi
    history.rows.append(DiagnosticsRow(
        t_new,
        float(np.max(u_new)),
        float(np.min(u_new)),
        float(np.max(rate[lo:hi])),
        float(np.min(rate[lo:hi])),
        prob.min_metric(m),
    ))
    new_state = FlowState(
        u=state.u.with_values(u_new),
        t=t_new,
        step_count=state.step_count + 1,
        udot=rate,
        history=history,
    )
    return new_state, StepReport(True, iters, res, trial_dt)


def _record(state: FlowState, prob: _Problem, t: float) -> None:
    psi = state.u.values + prob.shift
    m = prob.metric(psi, state.t)
    rate = state.udot if state.udot is not None else prob.velocity(psi, m)
    state.history.snapshots[t] = np.array(state.u.values)
    state.history.rates[t] = np.array(rate)
    state.history.metrics[t] = m


def _apply_boundary_data(u0: Field, prob: _Problem) -> Field:
    values = np.array(u0.values)
    grid = u0.grid
    for index, bc in ((0, grid.bc_inner), (-1, grid.bc_outer)):
        if bc.is_dirichlet and bc.value is not None:
            values[index] = bc.value - prob.shift[index]
    return u0.with_values(values)


def run_flow(
    params: FlowParams,
    initial: Field,
    weights: WeightTable,
    grid: RadialGrid | None = None,
    callbacks: Iterable[Callable[[FlowState], None]] = (),
) -> FlowState:
    """Integrate to t_end, recording snapshots at t=0, every snapshot time and t_end."""
    grid = grid or initial.grid
    if grid != initial.grid:
        raise ValueError("initial field lives on a different grid")
    callbacks = tuple(callbacks)
    prob = _Problem(params, grid, weights)
    u0 = _apply_boundary_data(initial, prob)
    psi0 = u0.values + prob.shift
    m0 = prob.metric(psi0, 0.0)
    prob.check_positive(m0)
    state = FlowState(u=u0, t=0.0, udot=prob.velocity(psi0, m0))
    _record(state, prob, 0.0)
    state.history.rows.append(DiagnosticsRow(
        0.0, float(np.max(u0.values)), float(np.min(u0.values)),
        float(np.max(state.udot[prob.lo:prob.hi])), float(np.min(state.udot[prob.lo:prob.hi])),
        prob.min_metric(m0),
    ))

    targets = sorted({t for t in params.snapshot_times if 0.0 < t < params.t_end})
    targets.append(params.t_end)
    logger.info(
        "Flow run: %s, t_end=%g, %d snapshot times",
        "normalized" if params.normalized else "unnormalized", params.t_end, len(targets),
    )
    dt = params.dt_init
    for target in targets:
        while state.t < target:
            step = min(dt, target - state.t)
            if target - state.t - step <= 1e-9 * step:
                step = target - state.t
            state, report = implicit_step(state, step, params, weights, _problem=prob)
            if math.isclose(state.t, target, rel_tol=1e-12, abs_tol=1e-15):
                state = replace(state, t=target)
            if report.dt_used < step:
                dt = report.dt_used
            elif params.adaptive and report.newton_iters > _SLOW_NEWTON:
                dt = max(0.5 * dt, 1e-14)
            elif not params.adaptive or report.newton_iters <= _FAST_NEWTON:
                dt = min(dt * params.dt_growth, params.dt_max)
        _record(state, prob, target)
        for callback in callbacks:
            callback(state)
    logger.info(
        "Flow finished at t=%g after %d steps (%d rejected)",
        state.t, state.history.steps, state.history.rejected_steps,
    )
    return state


def normalize_transform(solution: Callable[[float], Field], t_tilde: float) -> Field:
    """e^{-t~} phi(e^{t~} - 1)."""
    phi = solution(math.expm1(t_tilde))
    return phi.with_values(math.exp(-t_tilde) * phi.values)


def steady_residual(state: FlowState, params: FlowParams, weights: WeightTable) -> float:
    """Sup over interior free nodes of the normalized stationary equation residual."""
    if not params.normalized:
        raise ValueError("steady residual is defined for normalized runs only")
    rhs = ma_rhs(state, params, weights).values
    lo, hi = state.u.grid.free_range
    lo, hi = max(lo, 1), min(hi, state.u.grid.n_nodes - 1)
    return float(np.max(np.abs(rhs[lo:hi])))


@dataclass(frozen=True, eq=False)
class RunHistory:
    """Snapshot matrices of one completed run, rows ordered by time."""

    grid: RadialGrid
    times: np.ndarray
    fields: np.ndarray
    rates: np.ndarray
    metrics: np.ndarray
    v: float = 0.0
    normalized: bool = False

    @classmethod
    def from_state(cls, state: FlowState, params: FlowParams) -> RunHistory:
        h = state.history
        times = sorted(h.snapshots)
        return cls(
            grid=state.u.grid,
            times=np.array(times),
            fields=np.vstack([h.snapshots[t] for t in times]),
            rates=np.vstack([h.rates[t] for t in times]),
            metrics=np.vstack([h.metrics[t] for t in times]),
            v=params.background.v,
            normalized=params.normalized,
        )

    def index_of(self, t: float) -> int:
        hits = np.flatnonzero(np.isclose(self.times, t, rtol=1e-9, atol=1e-15))
        if not hits.size:
            raise KeyError(f"no snapshot recorded at t={t}")
        return int(hits[0])

    def field_at(self, t: float) -> Field:
        return Field(self.grid, self.fields[self.index_of(t)])

    def metric_at(self, t: float) -> Field:
        """Metric coefficient g = (A_ss + u_ss) e^{-s} against i dz^dz-bar."""
        m = self.metrics[self.index_of(t)]
        return Field(self.grid, m * np.exp(-self.grid.nodes))


@dataclass(frozen=True)
class InitialData:
    """Recipe for the initial potential; the truncation level comes from l_index."""

    kind: InitialKind = InitialKind.ZERO
    c: float = 3.0
    amplitude: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", InitialKind(self.kind))

    def build(self, l_index: int, background: BackgroundSpec, grid: RadialGrid) -> Field:
        return make_initial(
            self.kind, l_index, background, grid, c=self.c, amplitude=self.amplitude
        )
