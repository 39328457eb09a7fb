"""Tests for lcflow.models.geometry."""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from lcflow.errors import PositivityError
from lcflow.models.geometry import (
    BackgroundSpec,
    DivisorKind,
    DivisorSpec,
    assemble_background,
    cg_potential,
    check_local_model,
    conic_profile,
    conic_regularizer,
    conic_shift,
    hat_background,
    weight_table,
    zero_lelong_check,
)
from lcflow.models.grid import Field, make_grid, second_derivative_values

CUSP = DivisorSpec(DivisorKind.CUSP)


@pytest.fixture()
def grid():
    return make_grid(-40.0, -1.0, 391)


def _direct_regularizer(t, beta, eps):
    value, _ = quad(
        lambda r: ((r + eps) ** beta - eps**beta) / r, 0.0, t,
        epsabs=0.0, epsrel=1e-12, limit=400, points=[eps] if eps < t else None,
    )
    return value / beta


class TestDivisorSpec:
    def test_cusp_coefficient_forced_to_one(self):
        assert DivisorSpec("cusp", coefficient=0.3).coefficient == 1.0

    def test_conic_coefficient_range(self):
        with pytest.raises(ValueError, match="conic coefficient"):
            DivisorSpec("conic", coefficient=1.0)
        assert DivisorSpec("conic", coefficient=0.25).beta == pytest.approx(0.75)

    def test_canonical_coefficient_nonnegative(self):
        with pytest.raises(ValueError, match="canonical coefficient"):
            DivisorSpec("canonical", coefficient=-0.5)

    def test_epsilon_and_scale(self):
        with pytest.raises(ValueError, match="epsilon"):
            DivisorSpec("conic", coefficient=0.5, epsilon=-1.0)
        with pytest.raises(ValueError, match="hermitian_scale"):
            DivisorSpec("cusp", hermitian_scale=0.0)

    def test_log_regularized(self):
        s = np.array([-5.0, -1.0])
        plain = DivisorSpec("canonical", epsilon=0.0)
        np.testing.assert_allclose(plain.log_regularized(s), s)
        reg = DivisorSpec("canonical", epsilon=0.1)
        np.testing.assert_allclose(reg.log_regularized(s), np.log(np.exp(s) + 0.01))

    def test_check_on_rejects_reaching_unit_norm(self, grid):
        with pytest.raises(ValueError, match="reaches 1"):
            DivisorSpec("cusp", hermitian_scale=3.0).check_on(grid)


class TestBackgroundSpec:
    def test_rejects_negative_parameters(self):
        with pytest.raises(ValueError, match="v="):
            BackgroundSpec(v=-0.1)
        with pytest.raises(ValueError, match="eta"):
            BackgroundSpec(eta=0.0)

    def test_cusp_coefficients(self):
        spec = BackgroundSpec(t=0.5, v=0.01)
        assert spec.cusp_coefficient() == pytest.approx(0.51)
        assert spec.at_time(0.0).cusp_coefficient(normalized=True) == pytest.approx(0.01)
        assert spec.cusp_coefficient(normalized=True) == pytest.approx(1.01 - math.exp(-0.5))

    def test_theta_coefficient_includes_v(self):
        assert BackgroundSpec(u=0.2, v=0.05).theta_coefficient() == pytest.approx(0.25)


class TestConicRegularizer:
    def test_zero_epsilon_closed_form(self):
        assert conic_regularizer(0.3, 0.5, 0.0) == pytest.approx(0.3**0.5 / 0.25)

    def test_beta_one_is_identity(self):
        assert conic_regularizer(0.7, 1.0, 0.2) == pytest.approx(0.7)

    def test_zero_argument(self):
        assert conic_regularizer(0.0, 0.5, 0.1) == 0.0

    @pytest.mark.parametrize("t", [1e-4, 0.0024, 0.0026, 0.05, 0.3])
    def test_matches_direct_quadrature(self, t):
        # eps = 0.01: t/eps straddles the series/quadrature switch
        expected = _direct_regularizer(t, 0.5, 0.01)
        assert conic_regularizer(t, 0.5, 0.01) == pytest.approx(expected, rel=1e-7)

    def test_continuous_across_series_switch(self):
        below = conic_regularizer(0.25 * 0.01 * (1 - 1e-9), 0.5, 0.01)
        above = conic_regularizer(0.25 * 0.01 * (1 + 1e-9), 0.5, 0.01)
        assert above == pytest.approx(below, rel=1e-7)

    def test_monotone_in_epsilon_and_t(self):
        eps = [0.1, 0.05, 0.01, 0.001, 0.0]
        values = [conic_regularizer(0.2, 0.5, e) for e in eps]
        assert all(b >= a for a, b in zip(values, values[1:]))
        ts = [0.01, 0.05, 0.1, 0.5]
        values = [conic_regularizer(t, 0.5, 0.01) for t in ts]
        assert all(b > a for a, b in zip(values, values[1:]))

    def test_converges_to_cone_profile(self):
        limit = 0.2**0.5 / 0.25
        assert conic_regularizer(0.2, 0.5, 1e-12) == pytest.approx(limit, rel=1e-3)

    @pytest.mark.parametrize("epsilon", [2.2e-313, 5e-324, 1e-60])
    def test_subnormal_epsilon_gives_cone_profile(self, epsilon):
        value = conic_regularizer(0.25, 0.5, epsilon)
        assert math.isfinite(value)
        assert value == pytest.approx(0.25**0.5 / 0.25, rel=1e-12)

    def test_tiny_argument_with_large_epsilon(self):
        value = conic_regularizer(1e-300, 0.5, 1e10)
        assert 0.0 < value < 1e-300

    def test_rejects_invalid_beta(self):
        with pytest.raises(ValueError, match="beta"):
            conic_regularizer(0.1, 1.5, 0.1)


class TestConicShift:
    def test_no_conic_divisor_gives_zero(self, grid):
        spec = BackgroundSpec(divisors=(CUSP,))
        np.testing.assert_array_equal(conic_shift(spec, grid), 0.0)

    def test_scaled_by_eta(self, grid):
        conic = DivisorSpec("conic", coefficient=0.5, epsilon=0.1)
        spec = BackgroundSpec(eta=2.0, divisors=(conic,))
        np.testing.assert_allclose(conic_shift(spec, grid), 2.0 * conic_profile(conic, grid))


class TestCgPotential:
    def test_values(self):
        assert cg_potential(-1.0) == pytest.approx(0.0)
        assert cg_potential(-math.e) == pytest.approx(-2.0)

    def test_rejects_reaching_divisor_norm_one(self):
        with pytest.raises(ValueError, match="below 1"):
            cg_potential(np.array([-2.0, 0.0]))

    def test_positive_curvature_contribution(self):
        g = make_grid(-30.0, -2.0, 281)
        d2 = second_derivative_values(cg_potential(g.nodes), g.spacing)
        assert np.all(d2 > 0.0)


class TestWeightTable:
    def test_cusp_weight(self, grid):
        w = weight_table((CUSP,), grid)
        s = grid.nodes
        np.testing.assert_allclose(w.log_weight.values, s + np.log(s * s))
        np.testing.assert_allclose(w.barrier.values, 0.1 * s)
        assert np.all(w.barrier.values <= 0.0)

    def test_canonical_enters_both_tables(self, grid):
        k = DivisorSpec("canonical", coefficient=1.0, epsilon=0.1)
        w = weight_table((k,), grid)
        expected = np.log(np.exp(grid.nodes) + 0.01)
        np.testing.assert_allclose(w.canonical_log.values, expected)
        np.testing.assert_allclose(w.log_weight.values, -expected)

    def test_barrier_needs_divisor(self, grid):
        with pytest.raises(ValueError, match="divisor"):
            weight_table((), grid, delta=0.1)
        assert np.all(weight_table((), grid, delta=0.0).barrier.values == 0.0)

    def test_stilde_choice(self, grid):
        conic = DivisorSpec("conic", coefficient=0.5, hermitian_scale=0.5)
        w = weight_table((CUSP, conic), grid, stilde_choice=1)
        np.testing.assert_allclose(w.log_stilde.values, grid.nodes + math.log(0.5))
        with pytest.raises(ValueError, match="stilde_choice"):
            weight_table((CUSP,), grid, stilde_choice=3)


class TestAssembleBackground:
    def test_flat_background(self, grid):
        _, a_ss = assemble_background(BackgroundSpec(u=1.0), grid)
        h = grid.spacing
        factor = 2.0 * (math.cosh(h) - 1.0) / h**2
        inner = slice(1, -1)
        np.testing.assert_allclose(a_ss.values[inner], factor * np.exp(grid.nodes[inner]))

    def test_cusp_background_deep_region(self, grid):
        spec = BackgroundSpec(t=0.5, v=0.01, divisors=(CUSP,))
        _, a_ss = assemble_background(spec, grid)
        s = grid.nodes
        deep = s < -20.0
        np.testing.assert_allclose(a_ss.values[deep], 1.02 / s[deep] ** 2, rtol=1e-3)

    def test_cone_background(self, grid):
        conic = DivisorSpec("conic", coefficient=0.5, epsilon=0.0)
        _, a_ss = assemble_background(BackgroundSpec(divisors=(conic,)), grid)
        s = grid.nodes[1:-1]
        np.testing.assert_allclose(a_ss.values[1:-1], np.exp(0.5 * s), rtol=2e-3)

    def test_degenerate_background_raises(self, grid):
        with pytest.raises(PositivityError, match="not positive"):
            assemble_background(BackgroundSpec(divisors=(CUSP,)), grid)

    def test_affine_in_time(self, grid):
        spec = BackgroundSpec(u=0.1, v=0.1, divisors=(CUSP,))
        a0 = assemble_background(spec.at_time(0.0), grid)[1].values
        a1 = assemble_background(spec.at_time(1.0), grid)[1].values
        a2 = assemble_background(spec.at_time(2.0), grid)[1].values
        np.testing.assert_allclose(a2 - a1, a1 - a0, rtol=1e-10, atol=1e-14)

    def test_hat_background_positive(self, grid):
        conic = DivisorSpec("conic", coefficient=0.5, epsilon=0.1)
        hat = hat_background(BackgroundSpec(divisors=(CUSP, conic)), grid)
        assert np.all(hat.values > 0.0)


class TestCheckLocalModel:
    def test_pure_cusp_ratio_two(self, grid):
        lo, hi = check_local_model(BackgroundSpec(t=0.5, v=0.01, divisors=(CUSP,)), grid)
        assert lo == pytest.approx(2.0, rel=1e-3)
        assert hi == pytest.approx(2.0, rel=1e-3)

    def test_envelope_independent_of_v(self, grid):
        a = check_local_model(BackgroundSpec(t=0.5, v=0.01, divisors=(CUSP,)), grid)
        b = check_local_model(BackgroundSpec(t=0.5, v=0.2, divisors=(CUSP,)), grid)
        assert b[0] == pytest.approx(a[0], rel=0.05)
        assert b[1] == pytest.approx(a[1], rel=0.05)


class TestZeroLelongCheck:
    def test_log_pole_has_zero_lelong_number(self, grid):
        f = Field(grid, -3.0 * np.log(-grid.nodes))
        assert zero_lelong_check(f, (CUSP,), (0.5, 0.2, 0.1), grid)

    def test_linear_pole_fails(self, grid):
        f = Field(grid, 0.1 * grid.nodes)
        assert not zero_lelong_check(f, (CUSP,), (0.05,), grid)

    def test_bounded_function_passes(self, grid):
        f = Field(grid, np.sin(grid.nodes))
        assert zero_lelong_check(f, (CUSP,), (0.5, 0.1, 0.01), grid)

    def test_eps_list_validation(self, grid):
        f = Field(grid, np.zeros(grid.n_nodes))
        with pytest.raises(ValueError, match="decreasing"):
            zero_lelong_check(f, (CUSP,), (0.1, 0.2), grid)
        with pytest.raises(ValueError, match="positive"):
            zero_lelong_check(f, (CUSP,), (0.0,), grid)
