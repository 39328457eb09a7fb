from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np
from scipy.integrate import trapezoid

logger = logging.getLogger(__name__)

MIN_NODES = 8


class BoundaryKind(str, Enum):
    NEUMANN = "neumann"
    DIRICHLET = "dirichlet"


@dataclass(frozen=True)
class Boundary:
    """Boundary condition at one end of the grid.

    A Dirichlet boundary with ``value=None`` holds the initial value of the
    prescribed potential for all time.
    """

    kind: BoundaryKind = BoundaryKind.NEUMANN
    value: float | None = None

    @classmethod
    def neumann(cls) -> Boundary:
        return cls(BoundaryKind.NEUMANN)

    @classmethod
    def dirichlet(cls, value: float | None = None) -> Boundary:
        return cls(BoundaryKind.DIRICHLET, None if value is None else float(value))

    @property
    def is_dirichlet(self) -> bool:
        return self.kind is BoundaryKind.DIRICHLET


@dataclass(frozen=True)
class RadialGrid:
    """Uniform mesh in s = log|z|^2 on [s_min, s_max], s_max < 0."""

    s_min: float
    s_max: float
    n_nodes: int
    bc_inner: Boundary = field(default_factory=Boundary.neumann)
    bc_outer: Boundary = field(default_factory=Boundary.dirichlet)

    @property
    def spacing(self) -> float:
        return (self.s_max - self.s_min) / (self.n_nodes - 1)

    @cached_property
    def nodes(self) -> np.ndarray:
        s = np.linspace(self.s_min, self.s_max, self.n_nodes)
        s.flags.writeable = False
        return s

    @property
    def free_range(self) -> tuple[int, int]:
        """Half-open index range of nodes whose values evolve."""
        lo = 1 if self.bc_inner.is_dirichlet else 0
        hi = self.n_nodes - 1 if self.bc_outer.is_dirichlet else self.n_nodes
        return lo, hi

    def interior(self, margin: int) -> slice:
        if margin < 0 or 2 * margin >= self.n_nodes:
            raise ValueError(f"interior margin {margin} invalid for {self.n_nodes} nodes")
        return slice(margin, self.n_nodes - margin)

    def window(self, s_lo: float, s_hi: float) -> np.ndarray:
        """Boolean mask of nodes with s_lo <= s <= s_hi."""
        return (self.nodes >= s_lo) & (self.nodes <= s_hi)


@dataclass(frozen=True, eq=False)
class Field:
    """Values of a radial function on a grid; read-only once built."""

    grid: RadialGrid
    values: np.ndarray
    extended: bool = False

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.n_nodes,):
            raise ValueError(
                f"field has shape {values.shape}, grid expects ({self.grid.n_nodes},)"
            )
        if not self.extended and not np.all(np.isfinite(values)):
            raise ValueError("field contains non-finite values")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def with_values(self, values: np.ndarray) -> Field:
        return Field(self.grid, values, self.extended)

    @classmethod
    def from_function(cls, grid: RadialGrid, fn) -> Field:
        return cls(grid, fn(grid.nodes))


def make_grid(
    s_min: float,
    s_max: float,
    n_nodes: int,
    bc_inner: Boundary | None = None,
    bc_outer: Boundary | None = None,
) -> RadialGrid:
    if s_max >= 0:
        raise ValueError(f"s_max={s_max} must be < 0 (log^2|z|^2 vanishes at s=0)")
    if s_min >= s_max:
        raise ValueError(f"s_min={s_min} must be < s_max={s_max}")
    if n_nodes < MIN_NODES:
        raise ValueError(f"n_nodes={n_nodes} must be >= {MIN_NODES}")
    grid = RadialGrid(
        float(s_min),
        float(s_max),
        int(n_nodes),
        bc_inner or Boundary.neumann(),
        bc_outer or Boundary.dirichlet(),
    )
    logger.debug("Grid [%g, %g] with %d nodes, spacing %.6g", s_min, s_max, n_nodes, grid.spacing)
    return grid


def second_derivative_values(values: np.ndarray, spacing: float) -> np.ndarray:
    """Centered D^2 inside, one-sided second-order 4-point stencil at both ends."""
    f = np.asarray(values, dtype=float)
    h2 = spacing * spacing
    out = np.empty_like(f)
    out[1:-1] = (f[:-2] - 2.0 * f[1:-1] + f[2:]) / h2
    out[0] = (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / h2
    out[-1] = (2.0 * f[-1] - 5.0 * f[-2] + 4.0 * f[-3] - f[-4]) / h2
    return out


def second_derivative(f: Field) -> Field:
    return f.with_values(second_derivative_values(f.values, f.grid.spacing))


def boundary_laplacian(values: np.ndarray, grid: RadialGrid) -> np.ndarray:
    """D^2 with Neumann-zero ends closed by ghost reflection.

    Dirichlet ends use the one-sided stencil; their values are held by the
    solver, so the entry is only reported, never used in an equation.
    """
    f = np.asarray(values, dtype=float)
    h2 = grid.spacing * grid.spacing
    out = second_derivative_values(f, grid.spacing)
    if not grid.bc_inner.is_dirichlet:
        out[0] = 2.0 * (f[1] - f[0]) / h2
    if not grid.bc_outer.is_dirichlet:
        out[-1] = 2.0 * (f[-2] - f[-1]) / h2
    return out


def laplacian_bands(grid: RadialGrid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(lower, diag, upper) coefficients of ``boundary_laplacian`` on free rows.

    ``lower[i]`` multiplies f[i-1] and ``upper[i]`` multiplies f[i+1]; the
    arrays have length n_nodes and only the free rows are meaningful.
    """
    n = grid.n_nodes
    inv_h2 = 1.0 / (grid.spacing * grid.spacing)
    lower = np.full(n, inv_h2)
    upper = np.full(n, inv_h2)
    diag = np.full(n, -2.0 * inv_h2)
    lower[0] = 0.0
    upper[-1] = 0.0
    if not grid.bc_inner.is_dirichlet:
        upper[0] = 2.0 * inv_h2
    if not grid.bc_outer.is_dirichlet:
        lower[-1] = 2.0 * inv_h2
    return lower, diag, upper


def integrate_l1(f: Field, against: Field) -> float:
    """Trapezoid quadrature of |f| * against over [s_min, s_max]."""
    w = against.values
    if np.any(w <= 0):
        raise ValueError("L1 measure must be strictly positive")
    return float(trapezoid(np.abs(f.values) * w, f.grid.nodes))


def sup_norm(f: Field, interior_margin: int = 0) -> float:
    sl = f.grid.interior(interior_margin)
    return float(np.max(np.abs(f.values[sl])))


def flat_area(grid: RadialGrid) -> Field:
    """Euclidean area density e^s of the disc in the s coordinate."""
    return Field(grid, np.exp(grid.nodes))
