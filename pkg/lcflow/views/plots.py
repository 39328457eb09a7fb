from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from ..models.flow import RunHistory

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    _HAS_MATPLOTLIB = True
except ImportError:
    _HAS_MATPLOTLIB = False

logger = logging.getLogger(__name__)


def plots_available() -> bool:
    return _HAS_MATPLOTLIB


def plot_run(history: RunHistory, diagnostics: np.ndarray, out_dir: Path) -> list[Path]:
    """Render fields.png (potential per snapshot) and diagnostics.png (sup/inf in time).

    Requires matplotlib (optional dependency); callers check plots_available().
    """
    if not _HAS_MATPLOTLIB:
        raise RuntimeError("matplotlib is not installed")
    out_dir.mkdir(parents=True, exist_ok=True)
    s = history.grid.nodes

    fig, (ax_u, ax_g) = plt.subplots(1, 2, figsize=(11, 4.5))
    for t, u, m in zip(history.times, history.fields, history.metrics):
        ax_u.plot(s, u, lw=1.0, label=f"t={t:g}")
        ax_g.semilogy(s, np.where(m > 0, m, np.nan), lw=1.0)
    ax_u.set(xlabel="s = log|z|^2", ylabel="phi", title="Potential")
    ax_g.set(xlabel="s = log|z|^2", ylabel="A_ss + phi_ss", title="Metric coefficient")
    ax_u.legend(fontsize=7)
    fig.tight_layout()
    fields_png = out_dir / "fields.png"
    fig.savefig(fields_png, dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(7, 4.5))
    t = diagnostics[:, 0]
    for col, label in ((1, "sup phi"), (2, "inf phi"), (3, "sup phi_t"), (4, "inf phi_t")):
        ax.plot(t, diagnostics[:, col], marker=".", lw=1.0, label=label)
    ax.set(xlabel="t", title="Diagnostics")
    ax.legend(fontsize=8)
    fig.tight_layout()
    diag_png = out_dir / "diagnostics.png"
    fig.savefig(diag_png, dpi=120)
    plt.close(fig)
    logger.info("Wrote %s and %s", fields_png, diag_png)
    return [fields_png, diag_png]
