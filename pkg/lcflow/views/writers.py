"""CSV and JSON artifacts of runs, cascades, audits and reference metrics.

Matrices are written one column per snapshot time (``s,t=<t0>,t=<t1>,...``)
with ``%.17g`` so that values survive a round trip bit for bit.
"""

from __future__ import annotations

import json
import logging
import math
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from ..errors import MissingArtifact
from ..models.flow import DiagnosticsRow, RunHistory
from ..models.grid import RadialGrid, make_grid

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
DIAGNOSTICS_COLUMNS = DiagnosticsRow._fields
RUN_MATRICES = {"fields": "fields.csv", "rates": "rates.csv", "metrics": "metric.csv"}
DIAGNOSTICS_FILE = "diagnostics.csv"


def _clean(obj):
    """JSON-safe copy: non-finite floats become null, numpy scalars become Python ones."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        return value if math.isfinite(value) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(obj), indent=2, allow_nan=False))
    logger.info("Wrote %s", path)
    return path


def read_json(path: Path):
    if not path.exists():
        raise MissingArtifact(str(path))
    return json.loads(path.read_text())


def write_matrix_csv(path: Path, s: np.ndarray, times, matrix: np.ndarray) -> Path:
    """Write rows of *matrix* (one per time) as columns next to ``s``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    header = ",".join(["s"] + [f"t={float(t)!r}" for t in times])
    table = np.column_stack([s, np.asarray(matrix).T])
    np.savetxt(path, table, fmt=FLOAT_FORMAT, delimiter=",", header=header, comments="")
    logger.debug("Wrote %s (%d columns)", path, table.shape[1])
    return path


def read_matrix_csv(path: Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(s, times, matrix) with one matrix row per time."""
    if not path.exists():
        raise MissingArtifact(str(path))
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    if not header or header[0] != "s" or not all(h.startswith("t=") for h in header[1:]):
        raise ValueError(f"{path}: unexpected header {','.join(header)!r}")
    times = np.array([float(h[2:]) for h in header[1:]])
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return table[:, 0], times, table[:, 1:].T


def write_diagnostics(path: Path, rows: list[DiagnosticsRow]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    table = np.array(rows, dtype=float).reshape(-1, len(DIAGNOSTICS_COLUMNS))
    np.savetxt(
        path, table, fmt=FLOAT_FORMAT, delimiter=",",
        header=",".join(DIAGNOSTICS_COLUMNS), comments="",
    )
    return path


def read_diagnostics(path: Path) -> np.ndarray:
    if not path.exists():
        raise MissingArtifact(str(path))
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def write_run(
    out_dir: Path, history: RunHistory, rows: list[DiagnosticsRow], summary: dict
) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    s = history.grid.nodes
    written = [
        write_matrix_csv(out_dir / name, s, history.times, getattr(history, attr))
        for attr, name in RUN_MATRICES.items()
    ]
    written.append(write_diagnostics(out_dir / DIAGNOSTICS_FILE, rows))
    summary = dict(summary)
    summary.setdefault("created", datetime.now(timezone.utc).isoformat(timespec="seconds"))
    written.append(write_json(out_dir / "summary.json", summary))
    return written


def grid_from_nodes(s: np.ndarray, like: RadialGrid | None = None) -> RadialGrid:
    if like is not None:
        if like.n_nodes != s.size or not np.allclose(like.nodes, s, rtol=0.0, atol=1e-12):
            raise ValueError("stored nodes do not match the configured grid")
        return like
    return make_grid(float(s[0]), float(s[-1]), int(s.size))


def read_run(
    run_dir: Path, grid: RadialGrid | None = None, v: float = 0.0, normalized: bool = False
) -> RunHistory:
    """Load the snapshot matrices of a run directory.

    A directory without its diagnostics table is an incomplete run and is
    rejected even when the matrices are present.
    """
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise MissingArtifact(str(run_dir))
    if not (run_dir / DIAGNOSTICS_FILE).exists():
        raise MissingArtifact(str(run_dir / DIAGNOSTICS_FILE))
    loaded = {attr: read_matrix_csv(run_dir / name) for attr, name in RUN_MATRICES.items()}
    s, times, _ = loaded["fields"]
    for attr, (_, other_times, _) in loaded.items():
        if other_times.shape != times.shape or not np.array_equal(other_times, times):
            raise ValueError(f"{run_dir}: {RUN_MATRICES[attr]} has different snapshot times")
    return RunHistory(
        grid=grid_from_nodes(s, grid),
        times=times,
        fields=loaded["fields"][2],
        rates=loaded["rates"][2],
        metrics=loaded["metrics"][2],
        v=v,
        normalized=normalized,
    )


def write_reference(
    out_dir: Path,
    s: np.ndarray,
    g: np.ndarray,
    ricci: np.ndarray,
    potential: np.ndarray,
    record: dict,
) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    csv = out_dir / "reference.csv"
    np.savetxt(
        csv, np.column_stack([s, g, ricci, potential]), fmt=FLOAT_FORMAT, delimiter=",",
        header="s,g,ricci,potential", comments="",
    )
    return [csv, write_json(out_dir / "reference.json", record)]
