"""Tests for lcflow.models.reference."""

import numpy as np
import pytest

from lcflow.models.base import ModelMetric
from lcflow.models.grid import Field, make_grid, second_derivative_values
from lcflow.models.reference import (
    ConeKEMetric,
    CuspKEMetric,
    FlatMetric,
    MetricKind,
    compare_metrics,
    metric_model,
    reference,
    ricci_fd,
)


@pytest.fixture()
def grid():
    return make_grid(-40.0, -1.0, 391)


class TestModelMetrics:
    def test_base_class_is_abstract(self):
        with pytest.raises(TypeError):
            ModelMetric()

    def test_cusp_coefficient(self):
        s = np.array([-2.0])
        np.testing.assert_allclose(CuspKEMetric().coefficient(s), 2.0 * np.exp(2.0) / 4.0)

    @pytest.mark.parametrize("model", [CuspKEMetric(), ConeKEMetric(0.5), FlatMetric()])
    def test_potential_generates_coefficient(self, model, grid):
        s = grid.nodes
        p_ss = second_derivative_values(model.potential(s), grid.spacing)
        inner = slice(1, -1)
        np.testing.assert_allclose(
            p_ss[inner], (model.coefficient(s) * np.exp(s))[inner], rtol=5e-3
        )

    def test_cone_beta_range(self):
        with pytest.raises(ValueError, match="beta"):
            ConeKEMetric(1.0)

    def test_einstein_constants(self):
        assert CuspKEMetric().einstein_constant() == -1.0
        assert FlatMetric().einstein_constant() == 0.0

    def test_info_summary(self):
        assert ConeKEMetric(0.25).get_info_summary()["beta"] == 0.25

    def test_metric_model_dispatch(self):
        assert isinstance(metric_model("cusp-ke"), CuspKEMetric)
        assert isinstance(metric_model(MetricKind.FLAT), FlatMetric)
        with pytest.raises(ValueError, match="beta"):
            metric_model("cone-ke")

    def test_reference_carries_potential_and_info(self, grid):
        ref = reference("cone-ke", grid, beta=0.5)
        np.testing.assert_allclose(ref.potential.values, ConeKEMetric(0.5).potential(grid.nodes))
        assert ref.info == {"Model": "cone KE", "beta": 0.5, "Einstein constant": -1.0}


class TestRicciFd:
    def test_cusp_is_einstein(self, grid):
        report = ricci_fd(reference("cusp-ke", grid), grid)
        assert report.einstein_residual < 1e-2

    def test_cusp_residual_converges(self):
        residuals = [
            ricci_fd(reference("cusp-ke", make_grid(-20.0, -1.0, n))).einstein_residual
            for n in (191, 381)
        ]
        assert residuals[1] < residuals[0] / 3.0

    def test_cone_is_einstein(self, grid):
        ref = reference("cone-ke", grid, beta=0.5)
        assert ref.beta == 0.5
        assert ricci_fd(ref).einstein_residual < 1e-2

    def test_flat_has_zero_curvature(self, grid):
        report = ricci_fd(reference("flat", grid))
        assert report.einstein_residual == 0.0

    def test_residual_is_relative_to_coefficient(self, grid):
        # doubling g keeps Ric, so Ric/g - lambda is 1/2 at every node
        doubled = Field(grid, 2.0 * reference("cusp-ke", grid).coefficient.values)
        assert ricci_fd(doubled).einstein_residual == pytest.approx(0.5, abs=1e-2)
        np.testing.assert_array_equal(report.ricci_coefficient.values, 0.0)

    def test_plain_field_uses_negative_constant(self, grid):
        g = reference("cusp-ke", grid).coefficient
        assert ricci_fd(Field(grid, g.values)).einstein_residual < 1e-2

    def test_rejects_nonpositive_metric(self, grid):
        with pytest.raises(ValueError, match="positive"):
            ricci_fd(Field(grid, np.zeros(grid.n_nodes)))


class TestCompareMetrics:
    def test_identical_metrics(self, grid):
        g = reference("cusp-ke", grid).coefficient
        assert compare_metrics(g, g) == 0.0

    def test_relative_distance(self, grid):
        g = reference("cusp-ke", grid).coefficient
        scaled = g.with_values(1.1 * g.values)
        assert compare_metrics(scaled, g) == pytest.approx(0.1)

    def test_window_restricts_nodes(self, grid):
        g = reference("cusp-ke", grid).coefficient
        values = np.array(g.values)
        values[-5:] *= 2.0
        assert compare_metrics(g.with_values(values), g, window=(-40.0, -5.0)) == 0.0

    def test_empty_window(self, grid):
        g = reference("flat", grid).coefficient
        with pytest.raises(ValueError, match="no nodes"):
            compare_metrics(g, g, window=(-100.0, -90.0))
