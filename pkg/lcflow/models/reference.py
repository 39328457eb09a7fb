from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .base import ModelMetric
from .grid import Field, RadialGrid, second_derivative_values

logger = logging.getLogger(__name__)


class MetricKind(str, Enum):
    CUSP_KE = "cusp-ke"
    CONE_KE = "cone-ke"
    FLAT = "flat"


class FlatMetric(ModelMetric):
    name = "flat"

    def coefficient(self, s: np.ndarray) -> np.ndarray:
        return np.ones_like(np.asarray(s, dtype=float))

    def potential(self, s: np.ndarray) -> np.ndarray:
        return np.exp(s)

    def einstein_constant(self) -> float:
        return 0.0

    def get_info_summary(self) -> dict:
        return {"Model": "flat", "Einstein constant": 0.0}


class CuspKEMetric(ModelMetric):
    """Punctured-disc hyperbolic metric 2 e^{-s} / s^2."""

    name = "cusp-ke"

    def coefficient(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return 2.0 * np.exp(-s) / (s * s)

    def potential(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return math.log(2.0) - np.log(s * s)

    def get_info_summary(self) -> dict:
        return {"Model": "cusp KE", "Einstein constant": -1.0}


class ConeKEMetric(ModelMetric):
    """Hyperbolic cone of angle 2*pi*beta: 2 beta^2 e^{(beta-1)s} / (1-e^{beta s})^2."""

    name = "cone-ke"

    def __init__(self, beta: float):
        if not 0.0 < beta < 1.0:
            raise ValueError(f"cone beta={beta} must lie in (0, 1)")
        self.beta = float(beta)

    def coefficient(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        b = self.beta
        return 2.0 * b * b * np.exp((b - 1.0) * s) / (-np.expm1(b * s)) ** 2

    def potential(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return math.log(2.0 * self.beta**2) - 2.0 * np.log(-np.expm1(self.beta * s))

    def get_info_summary(self) -> dict:
        return {"Model": "cone KE", "beta": self.beta, "Einstein constant": -1.0}


def metric_model(kind: MetricKind | str, beta: float | None = None) -> ModelMetric:
    kind = MetricKind(kind)
    if kind is MetricKind.CONE_KE:
        if beta is None:
            raise ValueError("cone-ke needs beta")
        return ConeKEMetric(beta)
    if kind is MetricKind.CUSP_KE:
        return CuspKEMetric()
    return FlatMetric()


@dataclass(frozen=True, eq=False)
class ReferenceMetric:
    kind: MetricKind
    coefficient: Field
    potential: Field
    beta: float | None = None
    einstein_constant: float = -1.0
    info: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class CurvatureReport:
    ricci_coefficient: Field
    einstein_residual: float


def reference(
    kind: MetricKind | str, grid: RadialGrid, beta: float | None = None
) -> ReferenceMetric:
    model = metric_model(kind, beta)
    g = model.coefficient(grid.nodes)
    if np.any(g <= 0.0):
        raise ValueError(f"{model.name} coefficient is not positive on the grid")
    return ReferenceMetric(
        kind=MetricKind(kind),
        coefficient=Field(grid, g),
        potential=Field(grid, model.potential(grid.nodes)),
        beta=beta if MetricKind(kind) is MetricKind.CONE_KE else None,
        einstein_constant=model.einstein_constant(),
        info=model.get_info_summary(),
    )


def ricci_fd(
    metric: ReferenceMetric | Field,
    grid: RadialGrid | None = None,
    interior_margin: int = 1,
) -> CurvatureReport:
    """Ricci coefficient -(log g)_ss e^{-s} and its Einstein residual.

    The residual is sup |Ric - lambda g| / g over interior nodes; the metric
    coefficients span many orders of magnitude across the grid, so the
    comparison is made relative to g.
    """
    if isinstance(metric, ReferenceMetric):
        coefficient, lam = metric.coefficient, metric.einstein_constant
    else:
        coefficient, lam = metric, -1.0
    grid = grid or coefficient.grid
    g = coefficient.values
    if np.any(g <= 0.0):
        raise ValueError("metric coefficient must be positive")
    s = grid.nodes
    ricci = -second_derivative_values(np.log(g), grid.spacing) * np.exp(-s)
    sl = grid.interior(interior_margin)
    residual = float(np.max(np.abs(ricci[sl] / g[sl] - lam)))
    return CurvatureReport(Field(grid, ricci), residual)


def compare_metrics(
    a: Field,
    b: Field,
    interior_margin: int = 1,
    window: tuple[float, float] | None = None,
) -> float:
    """Relative sup distance sup |a/b - 1| on interior nodes (optionally a window in s)."""
    grid = a.grid
    mask = np.zeros(grid.n_nodes, dtype=bool)
    mask[grid.interior(interior_margin)] = True
    if window is not None:
        mask &= grid.window(*window)
    if not np.any(mask):
        raise ValueError("comparison window selects no nodes")
    bv = b.values[mask]
    if np.any(bv <= 0.0):
        raise ValueError("reference coefficient must be positive on the interior")
    return float(np.max(np.abs(a.values[mask] / bv - 1.0)))
