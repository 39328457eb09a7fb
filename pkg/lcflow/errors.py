"""Exception hierarchy shared by models, controllers and the CLI."""

from __future__ import annotations


class LcflowError(Exception):
    """Base class for all lcflow failures."""


class ConfigError(LcflowError, ValueError):
    """Invalid experiment configuration (unknown key, wrong type or value)."""

    def __init__(self, message: str, field: str = "", line: int | None = None):
        self.field = field
        self.line = line
        where = field
        if line is not None:
            where = f"{field} (line {line})" if field else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class PositivityError(LcflowError):
    """The assembled background is not a metric on the grid (A_ss <= 0 somewhere)."""


class NonPositiveMetric(LcflowError):
    """A_ss + u_ss <= 0 at some node while evaluating the flow right-hand side."""

    def __init__(self, node: int, s: float, value: float):
        self.node = node
        self.s = s
        self.value = value
        super().__init__(f"metric coefficient {value:.3e} <= 0 at node {node} (s={s:.6g})")


class StepFailure(LcflowError):
    """Newton failed after exhausting all time-step halvings."""

    def __init__(self, t: float, dt: float, node: int, s: float, params: object = None):
        self.t = t
        self.dt = dt
        self.node = node
        self.s = s
        self.params = params
        super().__init__(str(self))

    def __str__(self) -> str:
        msg = (
            f"step failed at t={self.t:.6g} (dt={self.dt:.3e}), "
            f"worst residual at node {self.node} (s={self.s:.6g})"
        )
        if self.params is not None:
            msg += f" for parameters {self.params}"
        return msg


class MissingArtifact(LcflowError, FileNotFoundError):
    """A run directory lacks a file an audit or plot needs."""
