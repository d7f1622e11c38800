import numpy as np
import pytest

from coneflow.geometry import (
    ConeGeometry,
    GeometryError,
    PositivityError,
    RadialField,
    SingularityError,
    compute_h,
    donaldson_density,
    ke_log_density,
    omega_eps_density,
    regularized_cone_density,
    ricci_density,
    section_norm2,
    trace_ratio,
)
from coneflow.grid import RadialGrid
from coneflow.quadrature import chi_eval


def five_point_density(beta, eps, y, rel_h=0.05):
    """(1/4) of the 2-D five-point Laplacian of chi(eps + |z|^2) at z = sqrt(y), Richardson-extrapolated."""
    x = np.sqrt(y)
    h = min(rel_h * np.sqrt(eps + y), 0.5 * x)

    def lap(h):
        f = chi_eval(beta, eps, np.array([(x + h) ** 2, (x - h) ** 2, x * x + h * h, x * x]))
        return (f[0] + f[1] + 2 * f[2] - 4 * f[3]) / (4 * h * h)

    return (4 * lap(h / 2) - lap(h)) / 3


@pytest.mark.parametrize("beta", [0.3, 0.7])
@pytest.mark.parametrize("eps", [1.0, 1e-4, 1e-8])
@pytest.mark.parametrize("y", [1e-6, 0.3])
def test_density_is_second_derivative_of_potential(beta, eps, y):
    assert five_point_density(beta, eps, y) == pytest.approx(regularized_cone_density(beta, eps, y), rel=1e-6)


def test_cone_density_singular_at_eps_zero():
    with pytest.raises(SingularityError):
        regularized_cone_density(0.5, 0.0, np.array([0.0, 1.0]))
    assert regularized_cone_density(1.0, 0.0, 0.0) == 1.0


def test_section_norm():
    s = np.array([0.0, 0.5, 1.0, 1e-20])
    assert np.allclose(section_norm2(s), [0.0, 1.0, 0.0, 4e-20], rtol=1e-15, atol=0)


def test_radial_field_validation():
    with pytest.raises(ValueError):
        RadialField(np.array([1.0, np.nan]))
    with pytest.raises(PositivityError):
        RadialField(np.array([1.0, 0.0]), "density")
    f = RadialField([1.0, 2.0], "density")
    assert not f.values.flags.writeable


@pytest.fixture(scope="module")
def geom(grid512):
    return ConeGeometry(0.5, 1e-3, grid512)


def test_class_preservation(geom):
    a0 = geom.area0()
    assert a0 == pytest.approx(4 * np.pi, rel=1e-14)
    assert geom.grid.area(omega_eps_density(geom).values) == pytest.approx(a0, rel=1e-12)
    assert geom.grid.area(donaldson_density(geom).values) == pytest.approx(a0, rel=1e-12)


def test_auto_N_margin(geom):
    assert np.min(geom.omega_eps_density().values) >= 0.1 * 2.0
    assert geom.delta == pytest.approx(1.0 / geom.N)


def test_small_N_rejected(grid512):
    with pytest.raises(PositivityError, match="N too small"):
        ConeGeometry(0.5, 1e-3, grid512, N=0.1)
    with pytest.raises(PositivityError, match="delta too large"):
        ConeGeometry(0.5, 1e-3, grid512, delta=50.0).donaldson_density()


@pytest.mark.parametrize("kw", [dict(beta=0.0), dict(beta=1.2), dict(eps=-1e-3), dict(rho_exp=0.6), dict(N=-1.0)])
def test_invalid_geometry(grid512, kw):
    args = dict(beta=0.5, eps=1e-3, grid=grid512) | kw
    with pytest.raises(GeometryError):
        ConeGeometry(**args)


def test_omega_eps_tends_to_omega_D(grid512):
    g = ConeGeometry(0.5, 1e-3, grid512)
    gaps = [np.max(np.abs(g.with_eps(e).omega_eps_density().values - g.donaldson_density().values)[5:-5])
            for e in (1e-2, 1e-3, 1e-4)]
    assert gaps[0] > gaps[1] > gaps[2]


def test_donaldson_cone_ratio_grid_independent():
    # ratio to the standard cone density on a fixed sigma-band near the pole
    bands = []
    for n in (1024, 2048):
        g = ConeGeometry(0.5, 0.0, RadialGrid.graded(n, 1e-7), N=0.75)
        s = g.sigma
        band = (s > 1e-4) & (s < 1e-2)
        bands.append(np.interp(np.geomspace(2e-4, 5e-3, 20), s[band],
                               g.donaldson_density().values[band] / g.cone_model_density()[band]))
    assert np.max(np.abs(bands[1] / bands[0] - 1)) < 0.1


def test_h_vanishes_and_has_mean_zero(geom):
    h, res = compute_h(geom, return_residual=True)
    assert np.max(np.abs(h.values)) < 1e-12
    assert res < 1e-12
    assert geom.grid.mean(h.values, geom.m0) == pytest.approx(0.0, abs=1e-14)
    g1 = ConeGeometry(1.0, 0.3, geom.grid)
    assert np.max(np.abs(compute_h(g1).values)) < 1e-12


def test_h_dense_solve_agreement(geom):
    from coneflow.geometry import compute_h_rhs

    rhs = compute_h_rhs(geom) + np.cos(2 * np.pi * geom.sigma)  # nonzero manufactured load
    rhs -= np.sum(geom.grid.weights * rhs) / np.sum(geom.grid.weights)
    u = geom.grid.solve_ddbar(rhs)
    A = geom.grid.ddbar_dense()
    # fix the gauge by appending the mean constraint
    Aug = np.vstack([A, geom.grid.weights])
    dense = np.linalg.lstsq(Aug, np.append(rhs, 0.0), rcond=None)[0]
    assert np.max(np.abs(u - dense)) < 1e-8


def test_round_curvature(geom):
    R = ricci_density(geom.grid, geom.m0) / geom.m0
    assert np.max(np.abs(R - 1.0)) < 1e-12


def test_ke_density_has_unit_area_and_constant_curvature():
    beta = 0.5
    g = ConeGeometry(beta, 0.0, RadialGrid.graded(4097, 1e-9), N=10.0)
    F = ke_log_density(beta, g.sigma)
    # omega_KE = e^F |S|^(2 beta - 2) omega_0; integrate away from the poles
    s2 = g.S2
    m = np.where(s2 > 0, np.exp(F) * np.where(s2 > 0, s2, 1.0) ** (beta - 1) * 2.0, 0.0)
    inner = slice(1, -1)
    R = (2 - g.grid.ddbar(np.log(np.where(m > 0, m, 1.0))))[inner] / m[inner]
    mid = (g.sigma[inner] > 0.05) & (g.sigma[inner] < 0.95)
    assert np.allclose(R[mid], beta, rtol=1e-4)
    assert np.allclose(F, F[::-1], atol=1e-12)


def test_trace_ratio():
    assert np.allclose(trace_ratio([1.0, 2.0], [2.0, 2.0]).values, [2.0, 1.0])
    with pytest.raises(PositivityError):
        trace_ratio([1.0, 0.0], [1.0, 1.0])
