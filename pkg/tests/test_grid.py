import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coneflow.grid import GridError, RadialGrid


@pytest.fixture(params=["uniform", "graded"])
def grid(request):
    return RadialGrid.uniform(257) if request.param == "uniform" else RadialGrid.graded(257, 1e-5)


def test_round_area(grid):
    assert grid.area(np.full(grid.size, 2.0)) == pytest.approx(4 * np.pi, rel=1e-14)


def test_graded_grid_shape():
    g = RadialGrid.graded(129, 1e-6)
    assert g.nodes[1] == pytest.approx(1e-6, rel=1e-6)
    assert np.allclose(g.nodes, 1 - g.nodes[::-1], atol=1e-15)
    assert RadialGrid.graded(11, 0.5).label.startswith("uniform")


def test_invalid_nodes():
    with pytest.raises(GridError):
        RadialGrid(np.array([0.0, 0.5, 0.9]))
    with pytest.raises(GridError):
        RadialGrid(np.array([0.0, 0.5, 0.5, 1.0]))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=8, max_size=8))
def test_ddbar_has_zero_mass(coefs):
    g = RadialGrid.graded(65, 1e-4)
    f = np.polynomial.chebyshev.chebval(2 * g.nodes - 1, coefs)
    assert abs(np.sum(g.weights * g.ddbar(f))) <= 1e-12 * (1 + np.sum(np.abs(g.weights * g.ddbar(f))))


def test_ddbar_second_order_on_smooth_function():
    # f = sigma^2: (sigma(1-sigma) 2 sigma)' = 4 sigma - 6 sigma^2
    errs = []
    for n in (101, 201):
        g = RadialGrid.uniform(n)
        exact = 4 * g.nodes - 6 * g.nodes**2
        errs.append(np.max(np.abs(g.ddbar(g.nodes**2) - exact)[1:-1]))
    assert errs[1] < errs[0] / 3.5


def test_banded_matches_dense(grid):
    f = np.cos(3 * grid.nodes)
    assert np.allclose(grid.ddbar_dense() @ f, grid.ddbar(f), rtol=1e-12, atol=1e-9)


def test_solve_ddbar_round_trip(grid):
    u = np.sin(2 * np.pi * grid.nodes) + grid.nodes**3
    u = u - np.sum(grid.weights * u) / np.sum(grid.weights)
    back = grid.solve_ddbar(grid.ddbar(u))
    assert np.max(np.abs(back - u)) < 1e-10


def test_solve_ddbar_rejects_mass(grid):
    with pytest.raises(GridError):
        grid.solve_ddbar(np.ones(grid.size))


def test_solve_shifted_against_dense(grid):
    rng = np.random.default_rng(0)
    d = 1 + rng.random(grid.size)
    c = rng.random(grid.size)
    rhs = rng.standard_normal(grid.size)
    A = np.diag(d) - np.diag(c) @ grid.ddbar_dense()
    assert np.allclose(grid.solve_shifted(d, c, rhs), np.linalg.solve(A, rhs), rtol=1e-9, atol=1e-9)


def test_arclength_of_round_metric(grid):
    assert grid.arclength(np.full(grid.size, 2.0))[-1] == pytest.approx(np.pi, rel=1e-14)
