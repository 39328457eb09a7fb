"""Singular weights and background potentials on the radial model.

Every divisor sits at z = 0, so |S|^2 = hermitian_scale * e^s. The background
potential A(s) is assembled from three static profiles (the ample form theta,
the Carlson-Griffiths potential and the conic regularizer) whose coefficients
depend on the parameter tuple only.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from functools import lru_cache

import numpy as np
from scipy.integrate import quad
from scipy.special import binom

from ..errors import PositivityError
from .grid import Field, RadialGrid, second_derivative_values

logger = logging.getLogger(__name__)

QUAD_EPSABS = 1e-10
# Below this ratio t/epsilon the integral is summed from its binomial series.
_SERIES_RATIO = 0.25
_SERIES_TERMS = 40
# relative size of the epsilon correction below which the cone profile is returned
_NEGLIGIBLE = 1e-17


class DivisorKind(str, Enum):
    CUSP = "cusp"
    CONIC = "conic"
    CANONICAL = "canonical"


@dataclass(frozen=True)
class DivisorSpec:
    kind: DivisorKind
    coefficient: float = 1.0
    epsilon: float = 0.0
    hermitian_scale: float = 1.0

    def __post_init__(self) -> None:
        kind = DivisorKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is DivisorKind.CUSP:
            object.__setattr__(self, "coefficient", 1.0)
        elif kind is DivisorKind.CONIC and not 0.0 < self.coefficient < 1.0:
            raise ValueError(f"conic coefficient b={self.coefficient} must lie in (0, 1)")
        elif kind is DivisorKind.CANONICAL and self.coefficient < 0.0:
            raise ValueError(f"canonical coefficient a={self.coefficient} must be >= 0")
        if self.epsilon < 0.0:
            raise ValueError(f"epsilon={self.epsilon} must be >= 0")
        if self.hermitian_scale <= 0.0:
            raise ValueError(f"hermitian_scale={self.hermitian_scale} must be > 0")

    @property
    def beta(self) -> float:
        """Cone angle parameter 1 - b of a conic divisor."""
        return 1.0 - self.coefficient

    def log_norm(self, s: np.ndarray) -> np.ndarray:
        """log|S|^2."""
        return np.asarray(s, dtype=float) + math.log(self.hermitian_scale)

    def log_regularized(self, s: np.ndarray) -> np.ndarray:
        """log(|S|^2 + epsilon^2)."""
        log_norm = self.log_norm(s)
        if self.epsilon == 0.0:
            return log_norm
        return np.logaddexp(log_norm, 2.0 * math.log(self.epsilon))

    def check_on(self, grid: RadialGrid) -> None:
        if self.hermitian_scale * math.exp(grid.s_max) >= 1.0:
            raise ValueError(
                f"|S|^2 = {self.hermitian_scale}*e^s reaches 1 on the grid; "
                "lower hermitian_scale or s_max"
            )


@dataclass(frozen=True)
class BackgroundSpec:
    t: float = 0.0
    u: float = 0.0
    v: float = 0.0
    eta: float = 1.0
    delta: float = 0.1
    divisors: tuple[DivisorSpec, ...] = ()
    theta_scale: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "divisors", tuple(self.divisors))
        for name in ("t", "u", "v", "delta"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0.0:
                raise ValueError(f"{name}={value} must be finite and >= 0")
        if not self.eta > 0.0:
            raise ValueError(f"eta={self.eta} must be > 0")
        if not self.theta_scale > 0.0:
            raise ValueError(f"theta_scale={self.theta_scale} must be > 0")

    def of_kind(self, kind: DivisorKind) -> tuple[DivisorSpec, ...]:
        return tuple(d for d in self.divisors if d.kind is kind)

    def at_time(self, t: float) -> BackgroundSpec:
        return replace(self, t=t)

    def cusp_coefficient(self, normalized: bool = False) -> float:
        """Weight of the Carlson-Griffiths potential: t+v, or 1+v-e^{-t} when normalized."""
        if normalized:
            return 1.0 + self.v - math.exp(-self.t)
        return self.t + self.v

    def theta_coefficient(self) -> float:
        # u + v keeps the background increasing in v
        return self.u + self.v


@dataclass(frozen=True, eq=False)
class WeightTable:
    """Weight quotient of the flow equation and the Kodaira barrier.

    ``log_stilde`` is log|S~|^2 and ``barrier`` is delta * log_stilde.
    ``canonical_log`` is sum_k a_k log(|S_k|^2 + eps_k^2).
    """

    log_weight: Field
    barrier: Field
    log_stilde: Field
    canonical_log: Field
    delta: float


def conic_regularizer(t: float, beta: float, epsilon: float) -> float:
    """(1/beta) * int_0^t ((r + epsilon)^beta - epsilon^beta) / r dr."""
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta={beta} must lie in (0, 1]")
    if t < 0.0:
        raise ValueError(f"t={t} must be >= 0")
    if epsilon < 0.0:
        raise ValueError(f"epsilon={epsilon} must be >= 0")
    if t == 0.0:
        return 0.0
    if epsilon == 0.0:
        return t**beta / beta**2
    if beta == 1.0:
        return t
    # t/epsilon may overflow for subnormal epsilon; compare in log space first
    log_ratio = math.log(t) - math.log(epsilon)
    if log_ratio > 0.0 and math.exp(-beta * log_ratio) * (1.0 + log_ratio) < _NEGLIGIBLE:
        return t**beta / beta**2
    ratio = t / epsilon
    if ratio <= _SERIES_RATIO:
        k = np.arange(1, _SERIES_TERMS + 1)
        series = np.sum(binom(beta, k) * ratio**k / k)
        return float(epsilon**beta * series / beta)

    def integrand(r: float) -> float:
        if r == 0.0:
            return beta * epsilon ** (beta - 1.0)
        return epsilon**beta * math.expm1(beta * math.log1p(r / epsilon)) / r

    value, _ = quad(
        integrand, 0.0, t, epsabs=QUAD_EPSABS, epsrel=1e-12, limit=200,
        points=[epsilon] if epsilon < t else None,
    )
    return value / beta


@lru_cache(maxsize=128)
def _conic_profile(grid: RadialGrid, beta: float, shift: float, scale: float) -> np.ndarray:
    x = scale * np.exp(grid.nodes)
    profile = np.array([conic_regularizer(float(xi), beta, shift) for xi in x])
    profile.flags.writeable = False
    return profile


def conic_profile(divisor: DivisorSpec, grid: RadialGrid) -> np.ndarray:
    """F(|S|^2, 1-b, eps^2) at every node."""
    return _conic_profile(grid, divisor.beta, divisor.epsilon**2, divisor.hermitian_scale)


def conic_shift(spec: BackgroundSpec, grid: RadialGrid) -> np.ndarray:
    """eta * sum over conic divisors of F(|S_j|^2, 1-b_j, eps_j^2)."""
    total = np.zeros(grid.n_nodes)
    for d in spec.of_kind(DivisorKind.CONIC):
        total = total + conic_profile(d, grid)
    return spec.eta * total


def cg_potential(s, hermitian_scale: float = 1.0):
    """-log log^2(hermitian_scale * e^s), the Carlson-Griffiths potential."""
    sigma = np.asarray(s, dtype=float) + math.log(hermitian_scale)
    if np.any(sigma >= 0.0):
        raise ValueError("hermitian_scale * e^s must stay below 1")
    value = -np.log(sigma * sigma)
    return float(value) if np.ndim(value) == 0 else value


def weight_table(
    divisors,
    grid: RadialGrid,
    stilde_choice: int | None = None,
    delta: float = 0.1,
) -> WeightTable:
    """Tabulate the log weight and barrier; stilde_choice=None multiplies all sections."""
    divisors = tuple(divisors)
    s = grid.nodes
    if delta > 0.0 and not divisors:
        raise ValueError("a barrier (delta > 0) needs at least one divisor")
    for d in divisors:
        d.check_on(grid)
    log_weight = np.zeros(grid.n_nodes)
    canonical = np.zeros(grid.n_nodes)
    for d in divisors:
        if d.kind is DivisorKind.CUSP:
            sigma = d.log_norm(s)
            log_weight += sigma + np.log(sigma * sigma)
        elif d.kind is DivisorKind.CONIC:
            log_weight += d.coefficient * d.log_regularized(s)
        else:
            term = d.coefficient * d.log_regularized(s)
            log_weight -= term
            canonical += term
    if stilde_choice is None:
        chosen = divisors
    else:
        if not 0 <= stilde_choice < len(divisors):
            raise ValueError(f"stilde_choice={stilde_choice} names no divisor")
        chosen = (divisors[stilde_choice],)
    log_stilde = np.zeros(grid.n_nodes)
    for d in chosen:
        log_stilde += d.log_norm(s)
    return WeightTable(
        log_weight=Field(grid, log_weight),
        barrier=Field(grid, delta * log_stilde),
        log_stilde=Field(grid, log_stilde),
        canonical_log=Field(grid, canonical),
        delta=delta,
    )


@dataclass(frozen=True, eq=False)
class BackgroundFamily:
    """Static profiles of the background; coefficients are applied per time.

    ``theta`` is theta_scale * e^s and ``cusp`` the summed CG potentials, each
    with its discrete second derivative. ``conic`` is the eta-weighted conic
    shift; its second derivative cancels against the shifted unknown and is
    therefore kept only for full assemblies.
    """

    spec: BackgroundSpec
    grid: RadialGrid
    theta: np.ndarray
    theta_ss: np.ndarray
    cusp: np.ndarray
    cusp_ss: np.ndarray
    conic: np.ndarray
    conic_ss: np.ndarray

    def smooth_part(self, t: float, normalized: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """(A - conic, A_ss - conic_ss) at time t."""
        spec = self.spec.at_time(t)
        a_theta = spec.theta_coefficient()
        a_cusp = spec.cusp_coefficient(normalized)
        return (
            a_theta * self.theta + a_cusp * self.cusp,
            a_theta * self.theta_ss + a_cusp * self.cusp_ss,
        )

    def evaluate(self, t: float, normalized: bool = False) -> tuple[np.ndarray, np.ndarray]:
        a, a_ss = self.smooth_part(t, normalized)
        return a + self.conic, a_ss + self.conic_ss


@lru_cache(maxsize=64)
def background_family(spec: BackgroundSpec, grid: RadialGrid) -> BackgroundFamily:
    for d in spec.divisors:
        d.check_on(grid)
    s = grid.nodes
    h = grid.spacing
    theta = spec.theta_scale * np.exp(s)
    cusp = np.zeros(grid.n_nodes)
    for d in spec.of_kind(DivisorKind.CUSP):
        cusp = cusp + cg_potential(s, d.hermitian_scale)
    conic = conic_shift(spec, grid)
    logger.debug(
        "Background family: %d divisors, eta=%g on %d nodes",
        len(spec.divisors), spec.eta, grid.n_nodes,
    )
    return BackgroundFamily(
        spec=replace(spec, t=0.0),
        grid=grid,
        theta=theta,
        theta_ss=second_derivative_values(theta, h),
        cusp=cusp,
        cusp_ss=second_derivative_values(cusp, h),
        conic=conic,
        conic_ss=second_derivative_values(conic, h),
    )


def assemble_background(
    spec: BackgroundSpec, grid: RadialGrid, normalized: bool = False
) -> tuple[Field, Field]:
    family = background_family(replace(spec, t=0.0), grid)
    a, a_ss = family.evaluate(spec.t, normalized)
    bad = np.flatnonzero(a_ss <= 0.0)
    if bad.size:
        i = int(bad[0])
        raise PositivityError(
            f"background not positive: A_ss={a_ss[i]:.3e} at s={grid.nodes[i]:.6g} "
            f"({bad.size} nodes); increase v or u, or reduce eta"
        )
    return Field(grid, a), Field(grid, a_ss)


def hat_background(spec: BackgroundSpec, grid: RadialGrid) -> Field:
    """A_ss of the fixed reference form: theta plus the unit CG and conic parts."""
    _, a_ss = assemble_background(replace(spec, t=1.0, u=1.0, v=0.0), grid)
    return a_ss


def local_model(spec: BackgroundSpec, grid: RadialGrid, normalized: bool = False) -> np.ndarray:
    """Model coefficient c/sigma^2 + eta x/(x+eps^2)^b + (u+v) theta_scale e^s."""
    s = grid.nodes
    model = spec.theta_coefficient() * spec.theta_scale * np.exp(s)
    for d in spec.of_kind(DivisorKind.CUSP):
        model = model + spec.cusp_coefficient(normalized) / d.log_norm(s) ** 2
    for d in spec.of_kind(DivisorKind.CONIC):
        x = d.hermitian_scale * np.exp(s)
        model = model + spec.eta * x / (x + d.epsilon**2) ** d.coefficient
    return model


def check_local_model(spec: BackgroundSpec, grid: RadialGrid) -> tuple[float, float]:
    """Envelope of A_ss over the local model on the inner half of the grid."""
    _, a_ss = assemble_background(spec, grid)
    model = local_model(spec, grid)
    deep = slice(1, grid.n_nodes // 2)
    ratio = a_ss.values[deep] / model[deep]
    return float(np.min(ratio)), float(np.max(ratio))


def zero_lelong_check(f: Field, divisors, eps_list, grid: RadialGrid) -> bool:
    """Check f >= eps * log|S|^2 + C_eps for each eps.

    C_eps is fitted on all nodes outside the innermost tenth of the grid and
    the bound is then checked on that innermost layer, where a positive
    Lelong number would show up as a violation.
    """
    eps_values = [float(e) for e in eps_list]
    if any(e <= 0.0 for e in eps_values):
        raise ValueError("eps_list must be strictly positive")
    if any(b >= a for a, b in zip(eps_values, eps_values[1:])):
        raise ValueError("eps_list must be decreasing")
    divisors = tuple(divisors)
    if not divisors:
        raise ValueError("zero Lelong check needs at least one divisor")
    log_s = np.zeros(grid.n_nodes)
    for d in divisors:
        log_s += d.log_norm(grid.nodes)
    layer = max(2, grid.n_nodes // 10)
    for eps in eps_values:
        slack = f.values - eps * log_s
        c_eps = float(np.min(slack[layer:]))
        if np.min(slack[:layer]) < c_eps - 1e-12 * max(1.0, abs(c_eps)):
            logger.debug("Lelong bound fails for eps=%g (C_eps=%g)", eps, c_eps)
            return False
    return True
