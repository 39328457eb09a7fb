"""Experiment configuration: YAML sections checked against ``_DEFAULTS``."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import yaml

from ..errors import ConfigError

logger = logging.getLogger(__name__)

_SEQ = (0.1, 0.05, 0.025, 0.0125)

_DEFAULTS: dict[str, dict] = {
    "grid": {
        "s_min": -40.0,
        "s_max": -1.0,
        "n_nodes": 801,
        "inner": "neumann",
        "inner_value": None,
        "outer": "dirichlet",
        "outer_value": None,
    },
    "background": {
        "u": 0.0,
        "v": 0.1,
        "eta": 1.0,
        "delta": 0.1,
        "theta_scale": 1.0,
        "stilde": None,
    },
    "flow": {
        "normalized": False,
        "t_end": 1.0,
        "dt_init": 1e-4,
        "dt_max": 0.05,
        "dt_growth": 1.2,
        "adaptive": False,
        "newton_tol": 1e-10,
        "max_newton": 50,
        "max_halvings": 20,
        "snapshot_times": (),
        "initial": "zero",
        "pole_c": 3.0,
        "amplitude": 1.0,
        "l_index": 1,
    },
    "cascade": {
        "v_seq": _SEQ,
        "epsj_seq": _SEQ,
        "epsk_seq": _SEQ,
        "u_seq": _SEQ,
        "l_seq": (2, 4, 8),
        "joint": True,
        "threads": 1,
    },
    "audit": {
        "audits": ("all",),
        "tolerance": 1e-8,
        "delta": None,
        "calibration_time": None,
        "trace_calibration_time": None,
        "trace_window": None,
        "normalized_calibration_time": 5.0,
        "threshold": 1e-2,
        "threshold_time": 1e-3,
        "slope_window": (1e-3, 1e-1),
        "require_slope": False,
        "drop_canonical_factor": False,
        "compare_run": None,
    },
    "output": {
        "dir": "runs/latest",
        "reference": None,
        "reference_beta": None,
        "reference_window": None,
        "plots": False,
    },
}

_DIVISOR_DEFAULTS: dict = {
    "kind": "cusp",
    "coefficient": 1.0,
    "epsilon": 0.0,
    "hermitian_scale": 1.0,
}

# Types of keys whose default does not carry one
_NULLABLE = {
    "grid.inner_value": float,
    "grid.outer_value": float,
    "background.stilde": int,
    "audit.delta": float,
    "audit.calibration_time": float,
    "audit.trace_calibration_time": float,
    "audit.trace_window": tuple,
    "audit.compare_run": str,
    "output.reference": str,
    "output.reference_beta": float,
    "output.reference_window": tuple,
}
_ELEMENT = {
    "flow.snapshot_times": float,
    "audit.audits": str,
    "audit.trace_window": float,
    "output.reference_window": float,
}
_CHOICES = {
    "grid.inner": ("neumann", "dirichlet"),
    "grid.outer": ("neumann", "dirichlet"),
    "flow.initial": ("zero", "smooth", "pole"),
    "output.reference": ("cusp-ke", "cone-ke", "flat"),
}
AUDIT_NAMES = (
    "upper", "lower", "time_derivative", "trace", "l1_continuity", "maximality", "normalized",
)


@dataclass(frozen=True)
class GridConfig:
    s_min: float
    s_max: float
    n_nodes: int
    inner: str
    inner_value: float | None
    outer: str
    outer_value: float | None


@dataclass(frozen=True)
class DivisorConfig:
    kind: str
    coefficient: float
    epsilon: float
    hermitian_scale: float


@dataclass(frozen=True)
class BackgroundConfig:
    u: float
    v: float
    eta: float
    delta: float
    theta_scale: float
    stilde: int | None


@dataclass(frozen=True)
class FlowConfig:
    normalized: bool
    t_end: float
    dt_init: float
    dt_max: float
    dt_growth: float
    adaptive: bool
    newton_tol: float
    max_newton: int
    max_halvings: int
    snapshot_times: tuple[float, ...]
    initial: str
    pole_c: float
    amplitude: float
    l_index: int


@dataclass(frozen=True)
class CascadeConfig:
    v_seq: tuple[float, ...]
    epsj_seq: tuple[float, ...]
    epsk_seq: tuple[float, ...]
    u_seq: tuple[float, ...]
    l_seq: tuple[int, ...]
    joint: bool
    threads: int


@dataclass(frozen=True)
class AuditConfig:
    audits: tuple[str, ...]
    tolerance: float
    delta: float | None
    calibration_time: float | None
    trace_calibration_time: float | None
    trace_window: tuple[float, ...] | None
    normalized_calibration_time: float
    threshold: float
    threshold_time: float
    slope_window: tuple[float, ...]
    require_slope: bool
    drop_canonical_factor: bool
    compare_run: str | None


@dataclass(frozen=True)
class OutputConfig:
    dir: str
    reference: str | None
    reference_beta: float | None
    reference_window: tuple[float, ...] | None
    plots: bool


@dataclass(frozen=True)
class ExperimentConfig:
    grid: GridConfig
    divisors: tuple[DivisorConfig, ...]
    background: BackgroundConfig
    flow: FlowConfig
    cascade: CascadeConfig
    audit: AuditConfig
    output: OutputConfig

    @property
    def audit_names(self) -> tuple[str, ...]:
        """Requested audits with ``all`` expanded (maximality needs a compare run)."""
        names: list[str] = []
        for name in self.audit.audits:
            expanded = [a for a in AUDIT_NAMES if a != "maximality"] if name == "all" else [name]
            names.extend(a for a in expanded if a not in names)
        return tuple(names)


_SECTIONS = {
    "grid": GridConfig,
    "background": BackgroundConfig,
    "flow": FlowConfig,
    "cascade": CascadeConfig,
    "audit": AuditConfig,
    "output": OutputConfig,
}


def _coerce_scalar(value, kind, key: str, line: int | None):
    if kind is bool:
        if isinstance(value, bool):
            return value
    elif kind is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif kind is float:
        # PyYAML reads 1e-4 (no dot) as a string
        if isinstance(value, (int, float, str)) and not isinstance(value, bool):
            try:
                return float(value)
            except ValueError:
                pass
    elif kind is str:
        if isinstance(value, str):
            return value
    raise ConfigError(f"expected {kind.__name__}, got {value!r}", key, line)


def _coerce(key: str, value, default, line: int | None):
    if value is None:
        if default is None:
            return None
        raise ConfigError("value must not be null", key, line)
    if default is None:
        kind = _NULLABLE[key]
    elif isinstance(default, tuple):
        kind = tuple
    else:
        kind = type(default)
    if kind is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"expected a list, got {value!r}", key, line)
        element = _ELEMENT.get(key) or (type(default[0]) if default else float)
        result = tuple(_coerce_scalar(v, element, key, line) for v in value)
    else:
        result = _coerce_scalar(value, kind, key, line)
    choices = _CHOICES.get(key)
    if choices and result not in choices:
        raise ConfigError(f"{result!r} is not one of {', '.join(choices)}", key, line)
    if key.endswith("_window") and (len(result) != 2 or not result[0] < result[1]):
        raise ConfigError(f"expected [lo, hi] with lo < hi, got {value!r}", key, line)
    if key == "audit.audits":
        unknown = [a for a in result if a != "all" and a not in AUDIT_NAMES]
        if unknown:
            raise ConfigError(f"unknown audit(s): {', '.join(unknown)}", key, line)
    return result


def _key_lines(text: str) -> dict[str, int]:
    """1-based line of every ``section.key`` (and ``divisors[i].key``) in the text."""
    lines: dict[str, int] = {}
    root = yaml.compose(text)
    if not isinstance(root, yaml.MappingNode):
        return lines
    for sec_node, body in root.value:
        section = sec_node.value
        lines[section] = sec_node.start_mark.line + 1
        if isinstance(body, yaml.MappingNode):
            for key_node, _ in body.value:
                lines[f"{section}.{key_node.value}"] = key_node.start_mark.line + 1
        elif isinstance(body, yaml.SequenceNode):
            for i, item in enumerate(body.value):
                lines[f"{section}[{i}]"] = item.start_mark.line + 1
                if isinstance(item, yaml.MappingNode):
                    for key_node, _ in item.value:
                        lines[f"{section}[{i}].{key_node.value}"] = key_node.start_mark.line + 1
    return lines


def _section(name: str, raw, lines: dict[str, int]) -> dict:
    defaults = _DEFAULTS[name]
    raw = {} if raw is None else raw
    if not isinstance(raw, dict):
        raise ConfigError("section must be a mapping", name, lines.get(name))
    unknown = [k for k in raw if k not in defaults]
    if unknown:
        key = f"{name}.{unknown[0]}"
        raise ConfigError(f"unknown key {unknown[0]!r}", key, lines.get(key))
    values = {}
    for key, default in defaults.items():
        dotted = f"{name}.{key}"
        values[key] = _coerce(dotted, raw.get(key, default), default, lines.get(dotted))
    return values


def _divisors(raw, lines: dict[str, int]) -> tuple[DivisorConfig, ...]:
    # An absent section means one cusp divisor; an explicit empty list means none
    raw = [dict(_DIVISOR_DEFAULTS)] if raw is None else raw
    if not isinstance(raw, list):
        raise ConfigError("divisors must be a list", "divisors", lines.get("divisors"))
    out = []
    for i, item in enumerate(raw):
        where = f"divisors[{i}]"
        if not isinstance(item, dict):
            raise ConfigError("divisor entry must be a mapping", where, lines.get(where))
        unknown = [k for k in item if k not in _DIVISOR_DEFAULTS]
        if unknown:
            key = f"{where}.{unknown[0]}"
            raise ConfigError(f"unknown key {unknown[0]!r}", key, lines.get(key))
        values = {}
        for key, default in _DIVISOR_DEFAULTS.items():
            dotted = f"{where}.{key}"
            values[key] = _coerce(dotted, item.get(key, default), default, lines.get(dotted))
        if values["kind"] not in ("cusp", "conic", "canonical"):
            key = f"{where}.kind"
            raise ConfigError(f"unknown divisor kind {values['kind']!r}", key, lines.get(key))
        out.append(DivisorConfig(**values))
    return tuple(out)


def config_from_dict(data: dict, lines: dict[str, int] | None = None) -> ExperimentConfig:
    lines = lines or {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping of sections")
    known = set(_SECTIONS) | {"divisors"}
    unknown = [k for k in data if k not in known]
    if unknown:
        raise ConfigError(f"unknown section {unknown[0]!r}", unknown[0], lines.get(unknown[0]))
    sections = {
        name: cls(**_section(name, data.get(name), lines)) for name, cls in _SECTIONS.items()
    }
    return ExperimentConfig(divisors=_divisors(data.get("divisors"), lines), **sections)


def parse_config(text: str, base: dict | None = None) -> ExperimentConfig:
    """Parse YAML text, overlaid on the *base* sections (a preset) when given."""
    try:
        data = yaml.safe_load(text)
        lines = _key_lines(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {exc}", line=mark.line + 1 if mark else None) from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError("top level must be a mapping of sections", line=1)
    if base:
        data = merge_sections(base, data or {})
    return config_from_dict(data or {}, lines)


def load_config(path: str | Path, base: dict | None = None) -> ExperimentConfig:
    path = Path(path)
    logger.info("Loading config %s", path)
    return parse_config(path.read_text(), base)


def config_to_dict(config: ExperimentConfig) -> dict:
    def plain(value):
        if isinstance(value, tuple):
            return [plain(v) for v in value]
        return value

    out: dict = {}
    for f in fields(config):
        section = getattr(config, f.name)
        if f.name == "divisors":
            out["divisors"] = [asdict(d) for d in section]
        else:
            out[f.name] = {k: plain(v) for k, v in asdict(section).items()}
    return out


def emit_config(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_dict(config), sort_keys=False)


def config_hash(config: ExperimentConfig) -> str:
    canonical = json.dumps(config_to_dict(config), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def merge_sections(base: dict, override: dict) -> dict:
    """Overlay *override* on *base* section by section; divisors are replaced whole."""
    merged = copy.deepcopy(base)
    for name, body in (override or {}).items():
        if isinstance(body, dict) and isinstance(merged.get(name), dict):
            merged[name].update(body)
        else:
            merged[name] = copy.deepcopy(body)
    return merged


def default_config() -> ExperimentConfig:
    return config_from_dict({})
