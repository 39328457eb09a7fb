"""Out-of-sample checks of the a priori estimates on recorded runs.

Each audit fits its constants once, on the earliest slice or on a designated
calibration slice, and then evaluates the inequality on every later slice.
The margin field holds, per node, the smallest slack seen; a negative value
beyond the tolerance fails the audit. Audits only read run histories.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy
from scipy.stats import linregress

from .flow import RunHistory
from .geometry import WeightTable
from .grid import Field, flat_area, integrate_l1, second_derivative_values

logger = logging.getLogger(__name__)

N_DIM = 1
DEFAULT_TOLERANCE = 1e-8


@dataclass(eq=False)
class AuditReport:
    name: str
    margin_field: Field
    fitted_constants: dict[str, float] = field(default_factory=dict)
    passed: bool = True
    notes: str = ""
    tolerance: float = DEFAULT_TOLERANCE

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"

    @property
    def min_margin(self) -> float:
        return float(np.min(self.margin_field.values))

    def to_record(self, config_hash: str = "") -> dict:
        return {
            "name": self.name,
            "verdict": self.verdict,
            "min_margin": _finite(self.min_margin),
            "constants": {k: _finite(v) for k, v in self.fitted_constants.items()},
            "notes": self.notes,
            "tolerance": self.tolerance,
            "config_hash": config_hash,
        }


def _finite(x: float) -> float | None:
    x = float(x)
    return x if math.isfinite(x) else None


def _report(
    name: str,
    run: RunHistory,
    rows: list[np.ndarray],
    constants: dict[str, float],
    tolerance: float,
    notes: list[str],
    extra_ok: bool = True,
) -> AuditReport:
    grid = run.grid
    if rows:
        margin = np.min(np.vstack(rows), axis=0)
    else:
        margin = np.full(grid.n_nodes, np.inf)
        notes.append("no out-of-sample slices")
    passed = bool(np.min(margin) >= -tolerance) and extra_ok
    notes.append(f"tolerance {tolerance:g}")
    report = AuditReport(
        name=name,
        margin_field=Field(grid, margin, extended=True),
        fitted_constants={k: float(v) for k, v in constants.items()},
        passed=passed,
        notes="; ".join(notes),
        tolerance=tolerance,
    )
    if not passed:
        logger.warning("Audit %s failed (min margin %.3e)", name, report.min_margin)
    return report


def _free(run: RunHistory) -> slice:
    lo, hi = run.grid.free_range
    return slice(lo, hi)


def _pad(run: RunHistory, sl: slice, values: np.ndarray) -> np.ndarray:
    out = np.full(run.grid.n_nodes, np.inf)
    out[sl] = values
    return out


def _delta(weights: WeightTable, delta: float | None) -> float:
    return weights.delta if delta is None else float(delta)


def _calibration_index(run: RunHistory, calibration_time: float | None, positive: bool) -> int:
    times = run.times
    candidates = np.flatnonzero(times > 0.0) if positive else np.arange(times.size)
    if not candidates.size:
        raise ValueError("run has no positive snapshot times")
    if calibration_time is None:
        return int(candidates[0])
    later = [i for i in candidates if times[i] >= calibration_time * (1.0 - 1e-9)]
    if not later:
        raise ValueError(f"no snapshot at or after calibration time {calibration_time}")
    return int(later[0])


def _half_note(name: str, full: float, half: float) -> str:
    return f"{name}_delta/2 >= {name}_delta: {half >= full}"


def shifted_upper_field(run: RunHistory, weights: WeightTable) -> np.ndarray:
    """u + t * sum_k a_k log(|S_k|^2 + eps_k^2) per snapshot."""
    return run.fields + run.times[:, None] * weights.canonical_log.values[None, :]


def audit_upper(
    runs: RunHistory | Sequence[RunHistory],
    weights: WeightTable | Sequence[WeightTable],
    *,
    calibration: Sequence[int] = (0,),
    shifted: bool = True,
    tolerance: float = DEFAULT_TOLERANCE,
) -> AuditReport:
    """The potential stays below C0 + C1 (t - t0) on every run.

    C0 is the largest initial value and C1 the largest initial rate (at least
    zero) over the calibration runs, which must be the maximal members under
    the comparison orderings. Every later slice of every run, and every slice
    of the other runs, is checked against them. With ``shifted`` the
    canonical-shifted potential is checked the same way, with its own pair of
    constants, alongside the plain one.
    """
    runs = [runs] if isinstance(runs, RunHistory) else list(runs)
    tables = [weights] * len(runs) if isinstance(weights, WeightTable) else list(weights)
    if len(tables) != len(runs):
        raise ValueError("need one weight table per run")
    calibration = sorted(set(int(i) for i in calibration))
    if not calibration or not all(0 <= i < len(runs) for i in calibration):
        raise ValueError(f"calibration indices {calibration} outside 0..{len(runs) - 1}")

    variants = [("", [r.fields for r in runs], [r.rates for r in runs])]
    if shifted:
        variants.append((
            "_shifted",
            [shifted_upper_field(r, w) for r, w in zip(runs, tables)],
            [r.rates + w.canonical_log.values[None, :] for r, w in zip(runs, tables)],
        ))
    t0 = min(float(runs[i].times[0]) for i in calibration)
    t_last = max(float(r.times[-1]) for r in runs)
    rows = []
    constants: dict[str, float] = {}
    for suffix, bounded, rates in variants:
        c0 = max(float(np.max(bounded[i][0])) for i in calibration)
        c1 = max(0.0, max(float(np.max(rates[i][0])) for i in calibration))
        for j, (run, values) in enumerate(zip(runs, bounded)):
            first = 1 if j in calibration else 0
            for k in range(first, run.times.size):
                rows.append(c0 + c1 * (run.times[k] - t0) - values[k])
        constants[f"C0{suffix}"] = c0
        constants[f"C1{suffix}"] = c1
        constants[f"C{suffix}"] = c0 + c1 * (t_last - t0)
    constants["sup_phi_calibration"] = max(float(np.max(runs[i].fields)) for i in calibration)
    constants["sup_phi_all_runs"] = max(float(np.max(r.fields)) for r in runs)
    notes = [
        f"C0, C1 fitted on the initial slice of {len(calibration)} of {len(runs)} runs",
        "bound: phi <= C0 + C1 t",
    ]
    if shifted:
        notes.append("bound: phi + t*sum a log(|S|^2+eps^2) <= C0_shifted + C1_shifted t")
    return _report("upper", runs[calibration[0]], rows, constants, tolerance, notes)


def _rate_integral(v: float, t: float) -> float:
    """Antiderivative of log(v + t) vanishing at v + t = 1."""
    x = v + t
    return float(xlogy(x, x) - x)


def audit_lower(
    run: RunHistory,
    weights: WeightTable,
    delta: float | None = None,
    *,
    tolerance: float = DEFAULT_TOLERANCE,
) -> AuditReport:
    """phi >= delta log|S~|^2 - C_delta on the whole run, in three forms.

    The envelope inf(phi - delta log|S~|^2)(t) >= inf(...)(0) +
    int_0^t (n log(v+tau) - C1) dtau carries one constant, C1, fitted on the
    first slice after t=0 and never below n log(v + T). Its minimum over the
    run gives the time-uniform C_delta of the plain bound. The improved barrier
    phi >= delta t log|S~|^2 + delta log|S~|^2 - C_imp - C_imp_rate t takes
    C_imp from the first slice and C_imp_rate from the next one.
    """
    delta = _delta(weights, delta)
    ls = weights.log_stilde.values
    barrier = delta * ls
    g = run.fields - barrier[None, :]
    times = run.times
    t0 = times[0]
    c0 = float(np.min(g[0]))
    c0_half = float(np.min(run.fields[0] - 0.5 * barrier))
    constants = {
        "C_delta_initial": -c0,
        "C_delta_half_initial": -c0_half,
        "C_delta_uniform": float(np.max(-g)),
    }
    notes = [f"delta={delta:g}", _half_note("C", -c0, -c0_half)]
    rows = []
    if times.size > 1:
        t1 = times[1]

        def envelope(t: float, c1: float) -> float:
            return (
                c0
                + N_DIM * (_rate_integral(run.v, t) - _rate_integral(run.v, t0))
                - c1 * (t - t0)
            )

        # at least n log(v + T) so that the envelope never increases
        c1 = max(
            0.0,
            N_DIM * math.log(run.v + times[-1]),
            float(np.max((envelope(t1, 0.0) - g[1]) / (t1 - t0))),
        )
        env = [envelope(float(times[k]), c1) for k in range(1, times.size)]
        c_delta = -min(c0, min(env))
        constants["C1"] = c1
        constants["C_delta"] = c_delta
        for k in range(1, times.size):
            rows.append(g[k] - env[k - 1])
            rows.append(g[k] + c_delta)

        improved = g - delta * (times - t0)[:, None] * ls[None, :]
        c_imp = -float(np.min(improved[0]))
        c_imp_rate = max(0.0, float(np.max(-(improved[1] + c_imp) / (t1 - t0))))
        constants["C_imp"] = c_imp
        constants["C_imp_rate"] = c_imp_rate
        for k in range(1, times.size):
            rows.append(improved[k] + c_imp + c_imp_rate * (times[k] - t0))
        notes.append("bounds: rate envelope, plain C_delta, improved barrier")
    return _report("lower", run, rows, constants, tolerance, notes)


def _derivative_constants(
    rates: np.ndarray, tc: float, b: np.ndarray
) -> tuple[float, float]:
    c1 = max(0.0, float(np.max(N_DIM * math.log(tc) + b - rates)))
    c2 = max(0.0, float(np.max((rates - N_DIM) * tc + b)))
    return c1, c2


def audit_time_derivative(
    run: RunHistory,
    weights: WeightTable,
    delta: float | None = None,
    *,
    calibration_time: float | None = None,
    slope_window: tuple[float, float] = (1e-3, 1e-1),
    require_slope: bool = False,
    tolerance: float = DEFAULT_TOLERANCE,
) -> AuditReport:
    """n log t + b - C1 <= phi_dot <= n + (C2 - b)/t with b = delta log|S~|^2."""
    delta = _delta(weights, delta)
    sl = _free(run)
    b = delta * weights.log_stilde.values[sl]
    rates = run.rates[:, sl]
    times = run.times
    ic = _calibration_index(run, calibration_time, positive=True)
    tc, rc = times[ic], rates[ic]
    c1, c2 = _derivative_constants(rc, tc, b)
    c1_half, c2_half = _derivative_constants(rc, tc, 0.5 * b)
    constants = {
        "calibration_time": float(tc),
        "C1": c1,
        "C2": c2,
        "C1_half": c1_half,
        "C2_half": c2_half,
    }
    rows = []
    for k in range(ic + 1, times.size):
        t = times[k]
        lower = rates[k] - (N_DIM * math.log(t) + b - c1)
        upper = N_DIM + (c2 - b) / t - rates[k]
        rows.append(_pad(run, sl, np.minimum(lower, upper)))

    notes = [
        f"delta={delta:g}",
        f"calibrated at t={tc:g}",
        _half_note("C1", c1, c1_half),
        _half_note("C2", c2, c2_half),
    ]
    in_window = (times >= slope_window[0] * (1 - 1e-9)) & (times <= slope_window[1] * (1 + 1e-9))
    slope_ok = True
    if np.count_nonzero(in_window) >= 2:
        fit = linregress(np.log(times[in_window]), np.min(rates[in_window], axis=1))
        constants["slope"] = float(fit.slope)
        notes.append(f"inf-node slope vs log t: {fit.slope:.4f}")
        if require_slope:
            slope_ok = 0.9 * N_DIM <= fit.slope <= 1.1 * N_DIM
    elif require_slope:
        slope_ok = False
        notes.append("too few snapshots in slope window")
    return _report("time_derivative", run, rows, constants, tolerance, notes, slope_ok)


def _trace_constants(
    log_ratio: np.ndarray, tc: float, b: np.ndarray, factor: np.ndarray
) -> tuple[float, float]:
    c_up = max(0.0, float(np.max(tc * log_ratio + b)))
    c_low = max(0.0, float(np.max(b + tc * (factor - log_ratio))))
    return c_up, c_low


def audit_trace(
    run: RunHistory,
    background_hat: Field,
    weights: WeightTable,
    delta: float | None = None,
    *,
    calibration_time: float | None = None,
    window: tuple[float, float] | None = None,
    drop_canonical_factor: bool = False,
    tolerance: float = DEFAULT_TOLERANCE,
) -> AuditReport:
    """Two-sided bound on log of the trace ratio (A_ss + u_ss) / g_hat.

        log R <= (C - b) / t
        log R >= log c + b / t + sum a log(|S_k|^2+eps^2) - C_low / t

    with c normalized to 1. C and C_low are fitted at the calibration time,
    by default the median positive snapshot. ``window`` restricts the audited
    nodes to an interval of s, e.g. away from a held outer end where the
    truncated model pins the potential.
    """
    delta = _delta(weights, delta)
    grid = run.grid
    mask = np.zeros(grid.n_nodes, dtype=bool)
    mask[1:-1] = True
    if window is not None:
        mask &= grid.window(*window)
    if not np.any(mask):
        raise ValueError("trace window selects no interior nodes")
    hat = background_hat.values[mask]
    if np.any(hat <= 0.0):
        raise ValueError("reference background must be positive")
    b = delta * weights.log_stilde.values[mask]
    factor = np.zeros_like(b) if drop_canonical_factor else weights.canonical_log.values[mask]
    times = run.times
    positive = np.flatnonzero(times > 0.0)
    if calibration_time is None and positive.size:
        calibration_time = float(times[positive[positive.size // 2]])
    ic = _calibration_index(run, calibration_time, positive=True)
    metrics = run.metrics[:, mask]
    if np.any(metrics[ic:] <= 0.0):
        raise ValueError("run metric is not positive on the audited slices")
    log_ratio = np.log(metrics[ic:] / hat[None, :])
    tc = times[ic]
    c_up, c_low = _trace_constants(log_ratio[0], tc, b, factor)
    c_up_half, c_low_half = _trace_constants(log_ratio[0], tc, 0.5 * b, factor)
    u_ss = [
        float(np.max(np.abs(second_derivative_values(run.fields[k], grid.spacing)[mask])))
        for k in range(ic, times.size)
    ]
    constants = {
        "calibration_time": float(tc),
        "C_upper": c_up,
        "C_lower": c_low,
        "C_upper_half": c_up_half,
        "C_lower_half": c_low_half,
        "c_lower": 1.0,
        "sup_u_ss": max(u_ss),
    }
    rows = []
    for j, k in enumerate(range(ic, times.size)):
        t = times[k]
        upper = (c_up - b) / t - log_ratio[j]
        lower = log_ratio[j] - ((b - c_low) / t + factor)
        margin = np.full(grid.n_nodes, np.inf)
        margin[mask] = np.minimum(upper, lower)
        rows.append(margin)
    notes = [
        f"delta={delta:g}",
        f"calibrated at t={tc:g}",
        _half_note("C_upper", c_up, c_up_half),
        _half_note("C_lower", c_low, c_low_half),
    ]
    if window is not None:
        notes.append(f"nodes in s window [{window[0]:g}, {window[1]:g}]")
    if drop_canonical_factor:
        notes.append("canonical factor dropped from the lower bound")
    return _report("trace", run, rows, constants, tolerance, notes)


def audit_l1_continuity(
    run: RunHistory,
    weights: WeightTable | None = None,
    delta: float | None = None,
    *,
    threshold: float = 1e-2,
    threshold_time: float = 1e-3,
    max_time: float | None = None,
    tolerance: float = DEFAULT_TOLERANCE,
) -> AuditReport:
    """L1(e^s ds) distance to the initial potential shrinks as t -> 0.

    Also checks phi(t) - phi(0) >= int_0^t (n log tau + b - C) dtau pointwise,
    with C fitted on the first positive slice.
    """
    grid = run.grid
    area = flat_area(grid)
    times = run.times
    u0 = run.fields[0]
    b = (
        np.zeros(grid.n_nodes)
        if weights is None
        else _delta(weights, delta) * weights.log_stilde.values
    )
    positive = [k for k in np.flatnonzero(times > 0.0) if max_time is None or times[k] <= max_time]
    distances = [integrate_l1(Field(grid, run.fields[k] - u0), area) for k in positive]
    floor = 1e-12
    shrinking = all(
        d_next > d or (d_next <= floor and d <= floor)
        for d, d_next in zip(distances, distances[1:])
    )
    constants: dict[str, float] = {}
    notes = [f"shrinking toward t=0: {shrinking}"]
    ok_threshold = True
    early = [d for k, d in zip(positive, distances) if times[k] <= threshold_time * (1 + 1e-9)]
    if early:
        constants["distance_at_threshold"] = early[-1]
        ok_threshold = early[-1] <= threshold
        notes.append(f"L1 distance {early[-1]:.3e} at t<={threshold_time:g} (limit {threshold:g})")
    for k, d in zip(positive, distances):
        constants[f"L1@{times[k]:g}"] = d

    rows = []
    if positive:
        def lower(t: float) -> np.ndarray:
            return N_DIM * (xlogy(t, t) - t) + t * b

        k1 = positive[0]
        t1 = times[k1]
        c = max(0.0, float(np.max((lower(t1) - (run.fields[k1] - u0)) / t1)))
        constants["C"] = c
        for k in positive:
            t = times[k]
            rows.append((run.fields[k] - u0) - (lower(t) - c * t))
    return _report(
        "l1_continuity", run, rows, constants, tolerance, notes, shrinking and ok_threshold
    )


def audit_maximality(
    run_a: RunHistory, run_b: RunHistory, *, tolerance: float = DEFAULT_TOLERANCE
) -> AuditReport:
    """run_a <= run_b + 2*tolerance at every common snapshot time."""
    rows = []
    common = 0
    for ka, t in enumerate(run_a.times):
        hits = np.flatnonzero(np.isclose(run_b.times, t, rtol=1e-9, atol=1e-15))
        if hits.size:
            common += 1
            rows.append(run_b.fields[hits[0]] - run_a.fields[ka])
    notes = [f"{common} common snapshot times"]
    return _report("maximality", run_b, rows, {}, 2.0 * tolerance, notes)


def audit_normalized(
    run: RunHistory,
    weights: WeightTable,
    delta: float | None = None,
    *,
    calibration_time: float = 5.0,
    tolerance: float = DEFAULT_TOLERANCE,
) -> AuditReport:
    """Time-uniform bounds of the normalized flow.

    Constants are fitted on t <= calibration_time and checked after it:
    sup phi <= C0 (plus the tail allowed by the rate bound), phi >=
    b - C_delta, and phi_dot <= C t e^{-t} for t >= 1.
    """
    if not run.normalized:
        raise ValueError("audit_normalized needs a normalized run")
    delta = _delta(weights, delta)
    sl = _free(run)
    barrier = delta * weights.log_stilde.values
    times = run.times
    cal = times <= calibration_time * (1 + 1e-12)
    later = np.flatnonzero(~cal)
    c0 = float(np.max(run.fields[cal]))
    c_delta = float(np.max(barrier[None, :] - run.fields[cal]))
    c_delta_half = float(np.max(0.5 * barrier[None, :] - run.fields[cal]))
    rate_window = np.flatnonzero(cal & (times >= 1.0))
    c_rate = 0.0
    for k in rate_window:
        t = times[k]
        c_rate = max(c_rate, float(np.max(run.rates[k, sl])) / (t * math.exp(-t)))
    tail = c_rate * (calibration_time + 1.0) * math.exp(-calibration_time)
    constants = {
        "C0": c0,
        "C_delta": c_delta,
        "C_delta_half": c_delta_half,
        "C_rate": c_rate,
        "tail": tail,
    }
    for t_mark in (5.0, 10.0):
        hits = np.flatnonzero(np.isclose(times, t_mark))
        if hits.size:
            constants[f"sup_rate@{t_mark:g}"] = float(np.max(run.rates[hits[0], sl]))
    rows = []
    for k in later:
        t = times[k]
        upper = c0 + tail - run.fields[k]
        lower = run.fields[k] - barrier + c_delta
        rate = _pad(run, sl, c_rate * t * math.exp(-t) - run.rates[k, sl])
        rows.append(np.minimum(np.minimum(upper, lower), rate))
    notes = [
        f"delta={delta:g}",
        f"calibrated on t<={calibration_time:g}",
        _half_note("C", c_delta, c_delta_half),
    ]
    return _report("normalized", run, rows, constants, tolerance, notes)
