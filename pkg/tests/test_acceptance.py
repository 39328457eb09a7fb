"""End-to-end acceptance runs on the presets.

The quick versions use reduced grids; full-resolution runs carry the
``slow`` marker (deselect with ``-m "not slow"``).
"""

import json
from dataclasses import replace

import numpy as np
import pytest

from lcflow.controllers.experiment import ExperimentController
from lcflow.models.flow import run_flow
from lcflow.models.geometry import conic_regularizer
from lcflow.models.reference import reference, ricci_fd
from lcflow.utils.config import parse_config
from lcflow.utils.presets import preset

NEWTON_MARGIN = -2e-10

# the preset grid is full resolution; quick runs use a coarser one
_CUSP_REDUCED = "grid:\n  s_min: -40.0\n  s_max: -1.0\n  n_nodes: 391\n"

SMALL_SEQUENCES = """\
cascade:
  v_seq: [0.1, 0.05]
  epsj_seq: [0.1, 0.05]
  epsk_seq: [0.1, 0.05]
  u_seq: [0.1, 0.05]
  l_seq: [2, 4]
grid:
  n_nodes: 101
"""


@pytest.fixture(autouse=True)
def config_home(tmp_path, monkeypatch):
    monkeypatch.setenv("XDG_CONFIG_HOME", str(tmp_path / "config"))


def _controller(tmp_path, name, overrides=""):
    config = parse_config(overrides, base=preset(name))
    return ExperimentController(config, out_dir=tmp_path / name)


def _audits(controller):
    outcome = controller.run()
    return {r.name: r for r in controller.audit(outcome.out_dir)}


class TestKahlerEinsteinConvergence:
    def test_cusp_reduced(self, tmp_path):
        outcome = _controller(tmp_path, "cusp-ke", _CUSP_REDUCED).run()
        assert outcome.summary["final_time"] == pytest.approx(20.0)
        assert outcome.summary["reference_distance"] <= 2e-2

    def test_cone_reduced(self, tmp_path):
        outcome = _controller(tmp_path, "cone-ke", "grid:\n  n_nodes: 381\n").run()
        assert outcome.summary["reference_distance"] <= 2e-2

    @pytest.mark.slow
    def test_cusp_full_resolution(self, tmp_path):
        fine = _controller(tmp_path / "fine", "cusp-ke")
        report = ricci_fd(reference("cusp-ke", fine.experiment.grid))
        assert report.einstein_residual <= 1e-4
        summary = fine.run().summary
        assert summary["reference_distance"] <= 1e-2
        assert summary["runtime_seconds"] <= 300.0
        coarse = _controller(tmp_path / "coarse", "cusp-ke", "grid:\n  n_nodes: 1024\n")
        coarse_summary = coarse.run().summary
        fine_distance = max(summary["reference_distance"], 1e-12)
        assert coarse_summary["reference_distance"] <= 3.0 * fine_distance

    @pytest.mark.slow
    def test_cone_full_resolution(self, tmp_path):
        overrides = "grid:\n  s_min: -50.0\n  n_nodes: 2048\n"
        summary = _controller(tmp_path, "cone-ke", overrides).run().summary
        assert summary["reference_distance"] <= 1e-2


class TestCascadeAcceptance:
    def _upper_record(self, tmp_path):
        records = json.loads((tmp_path / "ordering" / "audits.json").read_text())
        return next(r for r in records if r["name"] == "upper")

    def test_monotonicity_reduced(self, tmp_path):
        result = _controller(tmp_path, "ordering", SMALL_SEQUENCES).cascade()
        assert len(result.monotonicity_margins) == 6
        for margin in result.monotonicity_margins.values():
            assert margin >= NEWTON_MARGIN
        assert self._upper_record(tmp_path)["verdict"] == "pass"

    @pytest.mark.slow
    def test_full_cascade(self, tmp_path):
        result = _controller(tmp_path, "ordering").cascade()
        assert len(result.runs) >= 16
        assert all(m >= NEWTON_MARGIN for m in result.monotonicity_margins.values())
        assert self._upper_record(tmp_path)["verdict"] == "pass"


class TestPoleData:
    def test_time_derivative_envelope(self, tmp_path):
        reports = _audits(_controller(tmp_path, "pole-data"))
        report = reports["time_derivative"]
        assert 0.9 <= report.fitted_constants["slope"] <= 1.1
        assert report.passed

    def test_l1_continuity(self, tmp_path):
        reports = _audits(_controller(tmp_path, "pole-data", "audit:\n  threshold: 0.05\n"))
        assert reports["l1_continuity"].passed
        assert "normalized" not in reports

    def test_trace_smoothing(self, tmp_path):
        report = _audits(_controller(tmp_path, "pole-data"))["trace"]
        assert report.passed
        assert report.fitted_constants["calibration_time"] == pytest.approx(0.05)
        assert report.fitted_constants["sup_u_ss"] <= 1e3

    def test_smooth_data_continuity(self, tmp_path):
        report = _audits(_controller(tmp_path, "smooth-data"))["l1_continuity"]
        assert report.passed
        assert report.fitted_constants["distance_at_threshold"] <= 1e-2


class TestRegularizer:
    def test_cone_limit_value(self):
        assert conic_regularizer(1.0, 0.5, 0.0) == pytest.approx(4.0, abs=1e-10)

    def test_non_increasing_in_epsilon_on_sample(self):
        ts = np.geomspace(1e-3, 1.0, 20)
        eps = np.geomspace(0.5, 1e-4, 20)
        for t in ts:
            values = [conic_regularizer(float(t), 0.5, float(e)) for e in eps]
            assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))


class TestSelfConsistency:
    def test_time_step_order(self, tmp_path):
        overrides = "grid:\n  n_nodes: 101\nflow:\n  initial: zero\n"
        exp = _controller(tmp_path, "ordering", overrides).experiment
        u0 = exp.initial.build(exp.params.l_index, exp.background, exp.grid)
        finals = []
        for dt in (0.04, 0.02, 0.01):
            params = replace(
                exp.params, t_end=0.4, dt_init=dt, dt_max=dt, dt_growth=1.0, snapshot_times=()
            )
            finals.append(run_flow(params, u0, exp.weights, exp.grid).u.values)
        coarse = np.max(np.abs(finals[0] - finals[1]))
        fine = np.max(np.abs(finals[1] - finals[2]))
        assert np.log2(coarse / fine) >= 0.8
