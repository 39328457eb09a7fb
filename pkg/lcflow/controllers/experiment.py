from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..models.audits import (
    AuditReport,
    audit_l1_continuity,
    audit_lower,
    audit_maximality,
    audit_normalized,
    audit_time_derivative,
    audit_trace,
    audit_upper,
)
from ..models.cascade import (
    CascadeResult,
    CascadeSchedule,
    Ordering,
    build_stages,
    interleaving_report,
    limit_extract,
    run_cascade,
)
from ..models.flow import FlowParams, InitialData, RunHistory, run_flow, steady_residual
from ..models.geometry import (
    BackgroundSpec,
    DivisorSpec,
    WeightTable,
    hat_background,
    weight_table,
)
from ..models.grid import Boundary, BoundaryKind, RadialGrid, make_grid
from ..models.reference import compare_metrics, reference, ricci_fd
from ..utils.config import ExperimentConfig, config_hash, emit_config, load_config
from ..utils.recent import add_recent
from ..utils.strings import msg_normalized_skipped, status_cascade_progress
from ..views import writers
from ..views.plots import plot_run, plots_available

logger = logging.getLogger(__name__)

CONFIG_FILE = "config.yaml"


def build_grid(config: ExperimentConfig) -> RadialGrid:
    g = config.grid

    def boundary(kind: str, value: float | None) -> Boundary:
        if BoundaryKind(kind) is BoundaryKind.DIRICHLET:
            return Boundary.dirichlet(value)
        return Boundary.neumann()

    return make_grid(
        g.s_min, g.s_max, g.n_nodes,
        boundary(g.inner, g.inner_value), boundary(g.outer, g.outer_value),
    )


def build_background(config: ExperimentConfig) -> BackgroundSpec:
    b = config.background
    divisors = tuple(
        DivisorSpec(d.kind, d.coefficient, d.epsilon, d.hermitian_scale)
        for d in config.divisors
    )
    return BackgroundSpec(
        u=b.u, v=b.v, eta=b.eta, delta=b.delta, divisors=divisors, theta_scale=b.theta_scale
    )


def build_flow_params(config: ExperimentConfig, background: BackgroundSpec) -> FlowParams:
    f = config.flow
    return FlowParams(
        background=background,
        l_index=f.l_index,
        normalized=f.normalized,
        t_end=f.t_end,
        dt_init=f.dt_init,
        newton_tol=f.newton_tol,
        max_newton=f.max_newton,
        dt_max=f.dt_max,
        dt_growth=f.dt_growth,
        adaptive=f.adaptive,
        max_halvings=f.max_halvings,
        snapshot_times=f.snapshot_times,
    )


def build_schedule(config: ExperimentConfig) -> CascadeSchedule:
    c = config.cascade
    return CascadeSchedule(
        v_seq=c.v_seq,
        epsj_seq=c.epsj_seq,
        epsk_seq=c.epsk_seq,
        u_seq=c.u_seq,
        l_seq=c.l_seq,
        snapshot_times=config.flow.snapshot_times,
        joint=c.joint,
    )


@dataclass(frozen=True, eq=False)
class Experiment:
    """Domain objects built once from a validated configuration."""

    config: ExperimentConfig
    grid: RadialGrid
    background: BackgroundSpec
    params: FlowParams
    initial: InitialData
    weights: WeightTable
    config_hash: str

    @classmethod
    def from_config(cls, config: ExperimentConfig) -> Experiment:
        grid = build_grid(config)
        background = build_background(config)
        weights = weight_table(
            background.divisors, grid, config.background.stilde, background.delta
        )
        f = config.flow
        return cls(
            config=config,
            grid=grid,
            background=background,
            params=build_flow_params(config, background),
            initial=InitialData(f.initial, c=f.pole_c, amplitude=f.amplitude),
            weights=weights,
            config_hash=config_hash(config),
        )


@dataclass(eq=False)
class RunOutcome:
    out_dir: Path
    history: RunHistory
    summary: dict


class ExperimentController:
    """Runs commands against one configuration and writes their artifacts."""

    def __init__(self, config: ExperimentConfig, out_dir: str | Path | None = None,
                 threads: int | None = None):
        self.config = config
        self.experiment = Experiment.from_config(config)
        self.out_dir = Path(out_dir or config.output.dir)
        self.threads = threads if threads is not None else config.cascade.threads
        self._progress = (0, 0)

    @property
    def tolerance(self) -> float:
        return self.config.audit.tolerance

    def _write_config(self) -> None:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        (self.out_dir / CONFIG_FILE).write_text(emit_config(self.config))

    # -- run ---------------------------------------------------------------

    def run(self) -> RunOutcome:
        exp = self.experiment
        start = time.perf_counter()
        u0 = exp.initial.build(exp.params.l_index, exp.background, exp.grid)
        state = run_flow(exp.params, u0, exp.weights, exp.grid)
        history = RunHistory.from_state(state, exp.params)
        summary = {
            "config_hash": exp.config_hash,
            "runtime_seconds": time.perf_counter() - start,
            "final_time": state.t,
            "steps": state.history.steps,
            "rejected_steps": state.history.rejected_steps,
            "max_newton_iters": state.history.max_newton_iters,
            "steady_residual": (
                steady_residual(state, exp.params, exp.weights) if exp.params.normalized else None
            ),
            "reference_distance": self._reference_distance(history),
        }
        self._write_config()
        writers.write_run(self.out_dir, history, state.diagnostics, summary)
        if self.config.output.plots:
            self._plot(history, np.array(state.diagnostics, dtype=float))
        add_recent(self.out_dir, "run", exp.config_hash)
        return RunOutcome(self.out_dir, history, summary)

    def _reference_distance(self, history: RunHistory) -> float | None:
        out = self.config.output
        if out.reference is None:
            return None
        ref = reference(out.reference, history.grid, out.reference_beta)
        metric = history.metric_at(float(history.times[-1]))
        return compare_metrics(metric, ref.coefficient, window=out.reference_window)

    # -- cascade -----------------------------------------------------------

    def _dispatch_pool_msg(self, msg: tuple) -> None:
        tag, key = msg[0], msg[1]
        done, total = self._progress
        if tag == "started":
            logger.debug("Cascade run %s started", key.label)
        elif tag == "done":
            self._progress = (done + 1, total)
            logger.info("%s", status_cascade_progress(done + 1, total, key.label))
        elif tag == "error":
            logger.warning("Cascade run %s failed: %s", key.label, msg[-1])

    def cascade(self) -> CascadeResult:
        exp = self.experiment
        schedule = build_schedule(self.config)
        distinct = {m for st in build_stages(schedule) for m in st.members}
        self._progress = (0, len(distinct))
        options = {
            "initial": exp.initial,
            "stilde": self.config.background.stilde,
            "threads": self.threads,
            "on_message": self._dispatch_pool_msg,
        }
        result = run_cascade(schedule, exp.params, exp.grid, **options)
        swapped = {m for st in build_stages(schedule, swap_eps=True) for m in st.members}
        self._progress = (0, len(swapped))
        interleaving = interleaving_report(
            schedule, exp.params, exp.grid, first=result, **options
        )
        logger.info(
            "Swapped eps_j/eps_k limit differs by %.3e (budget %.3e)",
            interleaving["limit_difference"], interleaving["richardson_budget"],
        )
        self._write_config()
        s = exp.grid.nodes
        for tup, run in result.runs.items():
            writers.write_matrix_csv(
                self.out_dir / "stages" / tup.label / "fields.csv",
                s, run.history.times, run.history.fields,
            )
        margins = []
        for st in result.stages:
            if st.ordering not in result.monotonicity_margins:
                logger.warning("Stage %s has a single member; no margin", st.ordering.value)
                continue
            margin = result.monotonicity_margins[st.ordering]
            margins.append({
                "ordering": st.ordering.value,
                "min_margin": margin,
                "verdict": "pass" if margin >= -self.tolerance else "fail",
                "tolerance": self.tolerance,
                "config_hash": exp.config_hash,
            })
        writers.write_json(self.out_dir / "monotonicity_margins.json", margins)
        summary = self._cascade_summary(result)
        summary["interleaving_report"] = interleaving
        writers.write_json(self.out_dir / "cascade_summary.json", summary)
        audits = self._cascade_audits(result)
        writers.write_json(
            self.out_dir / "audits.json", [r.to_record(exp.config_hash) for r in audits]
        )
        add_recent(self.out_dir, "cascade", exp.config_hash)
        return result

    def _cascade_summary(self, result: CascadeResult) -> dict:
        tags = {}
        for t in result.times:
            _, tag = limit_extract(result, float(t))
            tags[f"{float(t)!r}"] = tag
        return {
            "config_hash": self.experiment.config_hash,
            "n_runs": len(result.runs),
            "stages": [
                {
                    "ordering": st.ordering.value,
                    "members": [m.label for m in st.members],
                    "differences": result.stage_differences.get(st.ordering, []),
                    "cauchy_shrinking": result.cauchy_shrinking(st.ordering),
                }
                for st in result.stages
            ],
            "terminal": result.terminal.label,
            "richardson_tags": tags,
        }

    def _cascade_audits(self, result: CascadeResult) -> list[AuditReport]:
        """One upper bound C over every cascade run.

        The potential decreases along each stage except eps_k, where it
        increases, so C is calibrated on the first member of every stage and
        on the last member of the eps_k stage.
        """
        order = list(result.runs)
        calibration = {
            order.index(st.members[-1 if st.ordering is Ordering.EPS_K else 0])
            for st in result.stages
        }
        runs = [result.runs[tup] for tup in order]
        report = audit_upper(
            [r.history for r in runs], [r.weights for r in runs],
            calibration=sorted(calibration), shifted=False, tolerance=self.tolerance,
        )
        return [report]

    # -- audits ------------------------------------------------------------

    def audit(self, run_dir: str | Path) -> list[AuditReport]:
        """Audit a finished run; geometry comes from the run's own config file."""
        run_dir = Path(run_dir)
        run_exp = self._run_experiment(run_dir)
        history = self._read_history(run_dir, run_exp)
        a = self.config.audit
        tol = a.tolerance
        weights = run_exp.weights
        names = list(self.config.audit_names)
        if a.compare_run and "maximality" not in names:
            names.append("maximality")

        reports: list[AuditReport] = []
        for name in names:
            if name == "upper":
                reports.append(audit_upper(history, weights, tolerance=tol))
            elif name == "lower":
                reports.append(audit_lower(history, weights, a.delta, tolerance=tol))
            elif name == "time_derivative":
                reports.append(audit_time_derivative(
                    history, weights, a.delta,
                    calibration_time=a.calibration_time,
                    slope_window=tuple(a.slope_window),
                    require_slope=a.require_slope,
                    tolerance=tol,
                ))
            elif name == "trace":
                hat = hat_background(run_exp.background, run_exp.grid)
                reports.append(audit_trace(
                    history, hat, weights, a.delta,
                    calibration_time=a.trace_calibration_time, window=a.trace_window,
                    tolerance=tol,
                ))
                if a.drop_canonical_factor:
                    ablation = audit_trace(
                        history, hat, weights, a.delta,
                        calibration_time=a.trace_calibration_time, window=a.trace_window,
                        drop_canonical_factor=True, tolerance=tol,
                    )
                    ablation.name = "trace_without_canonical_factor"
                    reports.append(ablation)
            elif name == "l1_continuity":
                reports.append(audit_l1_continuity(
                    history, weights, a.delta,
                    threshold=a.threshold, threshold_time=a.threshold_time, tolerance=tol,
                ))
            elif name == "normalized":
                if not history.normalized:
                    logger.warning("%s", msg_normalized_skipped(str(run_dir)))
                    continue
                reports.append(audit_normalized(
                    history, weights, a.delta,
                    calibration_time=a.normalized_calibration_time, tolerance=tol,
                ))
            elif name == "maximality":
                if not a.compare_run:
                    raise ValueError("maximality audit needs audit.compare_run")
                other_dir = Path(a.compare_run)
                other = self._read_history(other_dir, self._run_experiment(other_dir))
                reports.append(audit_maximality(history, other, tolerance=tol))

        out = writers.write_json(
            run_dir / "audits.json",
            [r.to_record(run_exp.config_hash) for r in reports],
        )
        logger.info("Audits written to %s", out)
        return reports

    def _run_experiment(self, run_dir: Path) -> Experiment:
        path = run_dir / CONFIG_FILE
        if path.exists():
            return Experiment.from_config(load_config(path))
        logger.info("No %s in %s; using the current configuration", CONFIG_FILE, run_dir)
        return self.experiment

    @staticmethod
    def _read_history(run_dir: Path, exp: Experiment) -> RunHistory:
        return writers.read_run(
            run_dir, exp.grid, v=exp.background.v, normalized=exp.params.normalized
        )

    # -- reference metrics -------------------------------------------------

    def reference(self, kind: str, beta: float | None = None) -> dict:
        grid = self.experiment.grid
        ref = reference(kind, grid, beta)
        report = ricci_fd(ref, grid)
        record = {
            "kind": ref.kind.value,
            "beta": ref.beta,
            "n_nodes": grid.n_nodes,
            "einstein_residual": report.einstein_residual,
            "model": ref.info,
            "config_hash": self.experiment.config_hash,
        }
        writers.write_reference(
            self.out_dir, grid.nodes, ref.coefficient.values,
            report.ricci_coefficient.values, ref.potential.values, record,
        )
        add_recent(self.out_dir, "reference", self.experiment.config_hash)
        return record

    # -- plots -------------------------------------------------------------

    def plot(self, run_dir: str | Path) -> list[Path]:
        run_dir = Path(run_dir)
        exp = self._run_experiment(run_dir)
        history = self._read_history(run_dir, exp)
        diagnostics = writers.read_diagnostics(run_dir / writers.DIAGNOSTICS_FILE)
        return plot_run(history, diagnostics, run_dir)

    def _plot(self, history: RunHistory, diagnostics: np.ndarray) -> None:
        if not plots_available():
            logger.warning("output.plots is set but matplotlib is not installed")
            return
        plot_run(history, diagnostics, self.out_dir)
