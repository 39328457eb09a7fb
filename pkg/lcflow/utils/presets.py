from __future__ import annotations

import copy
import math

# Dirichlet data of the cone Kähler-Einstein potential (beta=0.5) at s=-2
_CONE_OUTER = math.log(0.5) - 2.0 * math.log(-math.expm1(-1.0))

# theta_scale that makes e^s exactly stationary for the discrete flat flow
_FLAT_SPACING = 0.1
_FLAT_THETA = _FLAT_SPACING**2 / (2.0 * (math.cosh(_FLAT_SPACING) - 1.0))

_GEOMETRIC_TIMES = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 5e-2, 0.1, 0.2]

PRESETS: dict[str, dict] = {
    "cusp-ke": {
        "grid": {"s_min": -50.0, "s_max": -2.0, "n_nodes": 2048, "outer_value": math.log(2.0)},
        "divisors": [{"kind": "cusp"}],
        "background": {"u": 0.0, "v": 1e-3},
        "flow": {
            "normalized": True,
            "t_end": 20.0,
            "dt_max": 0.05,
            "snapshot_times": [1.0, 5.0, 10.0, 20.0],
        },
        "output": {"reference": "cusp-ke", "reference_window": [-40.0, -5.0]},
    },
    "cone-ke": {
        "grid": {"s_min": -40.0, "s_max": -2.0, "n_nodes": 761, "outer_value": _CONE_OUTER},
        "divisors": [{"kind": "conic", "coefficient": 0.5, "epsilon": 0.0}],
        "background": {"u": 0.0, "v": 1e-3},
        "flow": {
            "normalized": True,
            "t_end": 20.0,
            "dt_max": 0.05,
            "snapshot_times": [1.0, 5.0, 10.0, 20.0],
        },
        "output": {"reference": "cone-ke", "reference_beta": 0.5},
    },
    "ordering": {
        "grid": {"s_min": -20.0, "s_max": -1.0, "n_nodes": 201},
        "divisors": [
            {"kind": "cusp"},
            {"kind": "conic", "coefficient": 0.5, "epsilon": 0.1},
            {"kind": "canonical", "coefficient": 1.0, "epsilon": 0.1},
        ],
        "background": {"u": 0.1, "v": 0.1},
        "flow": {
            "t_end": 0.2,
            "initial": "pole",
            "pole_c": 3.0,
            "snapshot_times": [0.01, 0.05, 0.1, 0.2],
        },
    },
    "pole-data": {
        "grid": {"s_min": -40.0, "s_max": -1.0, "n_nodes": 801},
        "divisors": [{"kind": "cusp"}],
        "background": {"u": 0.0, "v": 1e-5, "delta": 0.1},
        "flow": {
            "t_end": 0.2,
            "dt_init": 1e-5,
            "initial": "pole",
            "pole_c": 3.0,
            "l_index": 8,
            "snapshot_times": _GEOMETRIC_TIMES,
        },
        "audit": {
            "calibration_time": 1e-3,
            "trace_calibration_time": 0.05,
            "trace_window": [-40.0, -3.0],
            "require_slope": True,
        },
    },
    "smooth-data": {
        "grid": {"s_min": -40.0, "s_max": -1.0, "n_nodes": 801},
        "divisors": [{"kind": "cusp"}],
        "background": {"u": 0.0, "v": 1e-3},
        "flow": {
            "t_end": 0.2,
            "dt_init": 1e-5,
            "initial": "smooth",
            "amplitude": 1.0,
            "snapshot_times": _GEOMETRIC_TIMES,
        },
    },
    "flat": {
        "grid": {
            "s_min": -10.0,
            "s_max": -1.0,
            "n_nodes": 91,
            "inner": "dirichlet",
            "outer": "dirichlet",
        },
        "divisors": [],
        "background": {"u": 1.0, "v": 0.0, "delta": 0.0, "theta_scale": _FLAT_THETA},
        "flow": {"t_end": 1.0, "snapshot_times": [0.5]},
        "audit": {"audits": ["upper", "l1_continuity"]},
        "output": {"reference": "flat"},
    },
}


def preset(name: str) -> dict:
    """Deep copy of a named preset's config sections."""
    try:
        return copy.deepcopy(PRESETS[name])
    except KeyError:
        raise ValueError(
            f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}"
        ) from None
