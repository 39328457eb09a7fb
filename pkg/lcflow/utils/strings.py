"""User-visible CLI strings: single source of truth for status and error messages."""

APP_NAME = "lc-flow-lab"

MSG_PLOT_EXTRA = "Plotting needs matplotlib: pip install lc-flow-lab[plot]"
MSG_NO_RECENT_RUN = "No run directory given and no previous run recorded."


def status_run_done(out_dir: str, final_time: float, steps: int) -> str:
    return f"Run finished at t={final_time:g} after {steps} steps -> {out_dir}"


def status_cascade_done(out_dir: str, n_runs: int) -> str:
    return f"Cascade of {n_runs} runs written to {out_dir}"


def status_cascade_progress(done: int, total: int, label: str) -> str:
    return f"[{done}/{total}] {label}"


def status_reference_done(kind: str, residual: float) -> str:
    return f"Reference {kind}: Einstein residual {residual:.3e}"


def status_audit(name: str, verdict: str, margin: float) -> str:
    return f"{name:<16} {verdict:<5} min margin {margin:+.3e}"


def status_ordering(ordering: str, verdict: str, margin: float) -> str:
    return f"{ordering:<8} {verdict:<5} min margin {margin:+.3e}"


def status_saved(path: str) -> str:
    return f"Saved: {path}"


def msg_config_error(err: Exception) -> str:
    return f"Configuration error: {err}"


def msg_step_failure(err: Exception) -> str:
    return f"Time step failed: {err}"


def msg_missing_artifact(err: Exception) -> str:
    return f"Missing run artifact: {err}"


def msg_normalized_skipped(run_dir: str) -> str:
    return f"Skipping normalized audit: {run_dir} is an unnormalized run"
