"""Tests for lcflow.models.grid."""

import numpy as np
import pytest

from lcflow.models.grid import (
    Boundary,
    Field,
    boundary_laplacian,
    flat_area,
    integrate_l1,
    laplacian_bands,
    make_grid,
    second_derivative,
    second_derivative_values,
    sup_norm,
)


@pytest.fixture()
def grid():
    return make_grid(-10.0, -1.0, 91)


class TestMakeGrid:
    def test_spacing_and_nodes(self, grid):
        assert grid.spacing == pytest.approx(0.1)
        assert grid.nodes[0] == -10.0
        assert grid.nodes[-1] == -1.0
        assert grid.nodes.size == 91

    def test_nodes_are_read_only(self, grid):
        with pytest.raises(ValueError):
            grid.nodes[0] = 0.0

    def test_rejects_nonnegative_s_max(self):
        with pytest.raises(ValueError, match="s_max"):
            make_grid(-5.0, 0.0, 10)

    def test_rejects_reversed_interval(self):
        with pytest.raises(ValueError, match="s_min"):
            make_grid(-1.0, -2.0, 10)

    def test_rejects_too_few_nodes(self):
        with pytest.raises(ValueError, match="n_nodes"):
            make_grid(-5.0, -1.0, 7)

    def test_default_boundaries(self, grid):
        assert not grid.bc_inner.is_dirichlet
        assert grid.bc_outer.is_dirichlet
        assert grid.free_range == (0, 90)

    def test_free_range_both_dirichlet(self):
        g = make_grid(-5.0, -1.0, 20, Boundary.dirichlet(), Boundary.dirichlet(1.0))
        assert g.free_range == (1, 19)
        assert g.bc_outer.value == 1.0

    def test_free_range_both_neumann(self):
        g = make_grid(-5.0, -1.0, 20, Boundary.neumann(), Boundary.neumann())
        assert g.free_range == (0, 20)

    def test_interior_margin(self, grid):
        assert grid.interior(1) == slice(1, 90)
        with pytest.raises(ValueError, match="margin"):
            grid.interior(46)

    def test_window_mask(self, grid):
        mask = grid.window(-5.05, -1.95)
        assert np.all(grid.nodes[mask] >= -5.05)
        assert np.all(grid.nodes[mask] <= -1.95)
        assert mask.sum() == 31


class TestField:
    def test_values_are_copied_and_frozen(self, grid):
        raw = np.zeros(grid.n_nodes)
        f = Field(grid, raw)
        raw[0] = 5.0
        assert f.values[0] == 0.0
        with pytest.raises(ValueError):
            f.values[0] = 1.0

    def test_shape_mismatch(self, grid):
        with pytest.raises(ValueError, match="shape"):
            Field(grid, np.zeros(5))

    def test_non_finite_rejected(self, grid):
        values = np.zeros(grid.n_nodes)
        values[3] = np.inf
        with pytest.raises(ValueError, match="non-finite"):
            Field(grid, values)

    def test_extended_allows_infinity(self, grid):
        values = np.zeros(grid.n_nodes)
        values[3] = np.inf
        assert Field(grid, values, extended=True).values[3] == np.inf

    def test_from_function(self, grid):
        f = Field.from_function(grid, np.exp)
        np.testing.assert_allclose(f.values, np.exp(grid.nodes))


class TestSecondDerivative:
    def test_exact_on_cubics_including_ends(self, grid):
        s = grid.nodes
        f = Field(grid, s**3 - 2.0 * s**2 + s)
        np.testing.assert_allclose(second_derivative(f).values, 6.0 * s - 4.0, atol=1e-8)

    def test_annihilates_affine(self, grid):
        values = 3.0 * grid.nodes + 7.0
        np.testing.assert_allclose(
            second_derivative_values(values, grid.spacing), 0.0, atol=1e-9
        )

    def test_second_order_convergence(self):
        errors = []
        for n in (41, 81):
            g = make_grid(-4.0, -1.0, n)
            d2 = second_derivative_values(np.sin(g.nodes), g.spacing)
            errors.append(np.max(np.abs(d2 + np.sin(g.nodes))))
        assert errors[0] / errors[1] == pytest.approx(4.0, rel=0.2)


class TestBoundaryLaplacian:
    def test_neumann_reflection_exact_on_even_quadratic(self):
        g = make_grid(-5.0, -1.0, 41, Boundary.neumann(), Boundary.neumann())
        values = (g.nodes - g.s_min) ** 2
        out = boundary_laplacian(values, g)
        assert out[0] == pytest.approx(2.0)
        np.testing.assert_allclose(out[1:-1], 2.0)

    def test_bands_reproduce_operator_on_free_rows(self):
        g = make_grid(-5.0, -1.0, 30, Boundary.neumann(), Boundary.dirichlet())
        rng = np.random.default_rng(0)
        f = rng.normal(size=g.n_nodes)
        lower, diag, upper = laplacian_bands(g)
        applied = diag * f
        applied[1:] += lower[1:] * f[:-1]
        applied[:-1] += upper[:-1] * f[1:]
        lo, hi = g.free_range
        np.testing.assert_allclose(applied[lo:hi], boundary_laplacian(f, g)[lo:hi])


class TestNorms:
    def test_integrate_l1_against_area(self):
        g = make_grid(-10.0, -1.0, 2001)
        ones = Field(g, np.ones(g.n_nodes))
        expected = np.exp(-1.0) - np.exp(-10.0)
        assert integrate_l1(ones, flat_area(g)) == pytest.approx(expected, rel=1e-5)

    def test_integrate_l1_uses_absolute_value(self, grid):
        f = Field(grid, -np.ones(grid.n_nodes))
        assert integrate_l1(f, flat_area(grid)) > 0.0

    def test_integrate_l1_rejects_nonpositive_measure(self, grid):
        f = Field(grid, np.ones(grid.n_nodes))
        with pytest.raises(ValueError, match="positive"):
            integrate_l1(f, Field(grid, np.zeros(grid.n_nodes)))

    def test_sup_norm_margin(self, grid):
        values = np.zeros(grid.n_nodes)
        values[0] = -9.0
        values[10] = 2.0
        f = Field(grid, values)
        assert sup_norm(f) == 9.0
        assert sup_norm(f, interior_margin=1) == 2.0
