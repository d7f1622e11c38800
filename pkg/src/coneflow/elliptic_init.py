"""Smoothing of a conical initial metric.

Given the log-density F of the initial metric,

    omega_phi(0) = e^F |S|^(2 beta - 2) omega_0,

the smoothed metric is obtained in two linear solves (n = 1):

1. Delta_{omega_eps} F_eps = Delta_{omega_D} F + a_eps, where a_eps makes the
   right-hand side integrate to zero against omega_eps, and the additive
   constant of F_eps is fixed by  (1/V) int e^{F_eps} (|S|^2 + eps)^(beta - 1) omega_0 = 1;
2. omega_0 + i ddbar phi_hat = e^{F_eps} (|S|^2 + eps)^(beta - 1) omega_0, sup phi_hat = 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ConeGeometry, GeometryError, RadialField, ke_log_density

RESIDUAL_TOL = 1e-8


class NormalizationError(GeometryError):
    pass


class InfeasibleError(GeometryError):
    pass


@dataclass(frozen=True)
class SmoothingResult:
    F_eps: RadialField
    a_eps_norm: float
    phi_hat: RadialField
    quasi_iso: tuple[float, float]
    laplace_residual: float
    potential_residual: float
    integral_residual: float
    normalization_residual: float
    area_residual: float

    @property
    def C_F(self) -> float:
        lo, hi = self.quasi_iso
        return max(hi, 1.0 / lo)

    def scalars(self) -> dict:
        return {
            "a_eps_norm": self.a_eps_norm,
            "quasi_iso_inf": self.quasi_iso[0],
            "quasi_iso_sup": self.quasi_iso[1],
            "C_F": self.C_F,
            "laplace_residual": self.laplace_residual,
            "potential_residual": self.potential_residual,
            "integral_residual": self.integral_residual,
            "normalization_residual": self.normalization_residual,
            "area_residual": self.area_residual,
            "sup_phi_hat": float(np.max(self.phi_hat.values)),
        }


def _values(F) -> np.ndarray:
    v = np.asarray(F, dtype=float)
    if not np.all(np.isfinite(v)):
        raise GeometryError("F must be finite on the grid")
    return v


def _require_eps(geom: ConeGeometry):
    if geom.eps <= 0.0:
        raise GeometryError("the smoothing equations need eps > 0")


def cone_weight(geom: ConeGeometry) -> np.ndarray:
    """(|S|^2 + eps)^(beta - 1)."""
    return (geom.S2 + geom.eps) ** (geom.beta - 1.0)


def exp_normalization(geom: ConeGeometry, F_eps) -> float:
    """(1/V) int e^{F_eps} (|S|^2 + eps)^(beta-1) omega_0; equals 1 when normalised."""
    g = geom.grid
    return g.integrate(np.exp(F_eps) * cone_weight(geom), geom.m0) / g.area(geom.m0)


def laplace_smooth(geom: ConeGeometry, F) -> tuple[RadialField, float]:
    F_eps, a, _ = _laplace_smooth(geom, _values(F))
    return RadialField(F_eps, "log-density"), a


def _laplace_smooth(geom: ConeGeometry, F: np.ndarray):
    _require_eps(geom)
    g = geom.grid
    m_eps = geom.omega_eps_density().values
    m_D = geom.donaldson_density().values
    lap_D = g.ddbar(F) / m_D
    a = -g.integrate(lap_D, m_eps) / g.area(m_eps)
    rhs = m_eps * (lap_D + a)
    F_eps = g.solve_ddbar(rhs)
    F_eps = F_eps - np.log(exp_normalization(geom, F_eps))
    target = lap_D + a
    residual = float(np.max(np.abs(g.ddbar(F_eps) / m_eps - target)) / max(1.0, np.max(np.abs(target))))
    if residual > RESIDUAL_TOL:
        raise ArithmeticError(f"Laplace smoothing residual {residual:.3e} exceeds {RESIDUAL_TOL}")
    return F_eps, float(a), residual


def solve_initial_potential(geom: ConeGeometry, F_eps, return_residual: bool = False):
    """phi_hat with omega_0 + i ddbar phi_hat = e^{F_eps}(|S|^2+eps)^(beta-1) omega_0, sup = 0."""
    _require_eps(geom)
    g = geom.grid
    rhs = np.exp(_values(F_eps)) * cone_weight(geom) * geom.m0
    mismatch = g.area(rhs) / g.area(geom.m0) - 1.0
    if abs(mismatch) > RESIDUAL_TOL:
        raise NormalizationError(
            f"right-hand side has area ratio 1{mismatch:+.3e} to omega_0; it is not in the class of omega_0"
        )
    phi = g.solve_ddbar(rhs - geom.m0, mass_tol=1e-6)
    phi -= np.max(phi)
    density = geom.m0 + g.ddbar(phi)
    if np.any(density <= 0.0):
        raise InfeasibleError(f"resulting density is nonpositive at node {int(np.argmin(density))}")
    residual = float(np.max(np.abs(density - rhs) / rhs))
    out = RadialField(phi, "potential")
    return (out, residual) if return_residual else out


def subharmonicity_check(geom: ConeGeometry, F_eps) -> float:
    """min over nodes of Delta_{omega_eps} F_eps (the measured -C)."""
    m_eps = geom.omega_eps_density().values
    return float(np.min(geom.grid.ddbar(_values(F_eps)) / m_eps))


def pipeline(geom: ConeGeometry, F, smooth: bool = True) -> SmoothingResult:
    """Smooth F and solve for the initial potential, checking every normalisation.

    ``smooth=False`` skips the Laplace step and only renormalises F; this is the
    path used to restart a flow from one of its own time slices.
    """
    g = geom.grid
    F = _values(F)
    if smooth:
        F_eps, a, lap_res = _laplace_smooth(geom, F)
    else:
        _require_eps(geom)
        F_eps = F - np.log(exp_normalization(geom, F))
        a, lap_res = 0.0, 0.0
    phi_hat, pot_res = solve_initial_potential(geom, F_eps, return_residual=True)
    density = geom.m0 + g.ddbar(phi_hat.values)
    m_eps = geom.omega_eps_density().values
    ratio = density / m_eps

    if smooth:
        integral = g.integrate(g.ddbar(F) / geom.donaldson_density().values + a, m_eps)
        integral_res = abs(integral) / g.area(m_eps)
    else:
        integral_res = 0.0
    norm_res = abs(exp_normalization(geom, F_eps) - 1.0)
    area_res = abs(g.area(density) / g.area(geom.m0) - 1.0)

    result = SmoothingResult(
        F_eps=RadialField(F_eps, "log-density"),
        a_eps_norm=a,
        phi_hat=phi_hat,
        quasi_iso=(float(np.min(ratio)), float(np.max(ratio))),
        laplace_residual=lap_res,
        potential_residual=pot_res,
        integral_residual=float(integral_res),
        normalization_residual=float(norm_res),
        area_residual=float(area_res),
    )
    for name in ("potential_residual", "integral_residual", "normalization_residual", "area_residual"):
        if getattr(result, name) > RESIDUAL_TOL:
            raise ArithmeticError(f"pipeline invariant {name} = {getattr(result, name):.3e} exceeds {RESIDUAL_TOL}")
    if np.max(phi_hat.values) != 0.0:
        raise ArithmeticError("sup phi_hat must vanish after normalisation")
    return result


# ---------------------------------------------------------------------------
# initial log-densities


def rough_log_density(beta: float, sigma, amplitude: float = 0.6, modes: int = 2) -> np.ndarray:
    """Football log-density plus a symmetric cosine ripple (negative curvature pockets)."""
    sigma = np.asarray(sigma, dtype=float)
    return ke_log_density(beta, sigma) + amplitude * np.cos(2.0 * np.pi * modes * sigma)


def initial_log_density(name: str, geom: ConeGeometry) -> np.ndarray:
    """Named initial data: ``ke``, ``rough`` or ``const``."""
    s = geom.sigma
    if name == "ke":
        return ke_log_density(geom.beta, s)
    if name == "rough":
        return rough_log_density(geom.beta, s)
    if name == "const":
        return np.zeros_like(s)
    raise ValueError(f"unknown initial data {name!r}; expected ke, rough or const")
