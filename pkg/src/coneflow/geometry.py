"""Background geometry: the sphere with two antipodal cone points.

M = CP^1, D = {0, infinity} = zero set of the holomorphic vector field
S = z d/dz (a section of the anticanonical bundle), with the bundle metric
normalised so that |S|^2 = 4 sigma (1 - sigma) and sup |S|^2 = 1.
The background metric omega_0 is round of area 4 pi (m_0 = 2); with this
choice Ric(omega_0) = omega_0 = Theta_h and the Ricci potential h vanishes.

All metric densities below are sigma-densities on a :class:`RadialGrid`
(see :mod:`coneflow.grid` for the conventions).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .grid import RadialGrid
from .quadrature import ChiDomainError, chi_eval

FIELD_KINDS = ("potential", "density", "log-density")
M0 = 2.0
S_NORM = 4.0


class GeometryError(ValueError):
    pass


class SingularityError(GeometryError):
    pass


class PositivityError(GeometryError):
    pass


@dataclass(frozen=True, eq=False)
class RadialField:
    values: np.ndarray
    kind: str = "potential"

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise ValueError(f"unknown field kind {self.kind!r}")
        v = np.array(self.values, dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        if self.kind == "density" and np.any(v <= 0.0):
            raise PositivityError(f"density field is nonpositive at node {int(np.argmin(v))}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __len__(self):
        return self.values.size


# ---------------------------------------------------------------------------
# scalar model functions


def regularized_cone_density(beta: float, eps: float, y):
    """dz ^ dzbar coefficient of i ddbar chi_beta(eps + |z|^2), i.e. beta^2 (eps + y)^(beta - 1)."""
    if not 0.0 < beta <= 1.0:
        raise ChiDomainError(f"beta must lie in (0, 1], got {beta}")
    y = np.asarray(y, dtype=float)
    if np.any(y < 0.0) or eps < 0.0:
        raise ChiDomainError("y and eps must be nonnegative")
    if eps == 0.0 and np.any(y == 0.0) and beta < 1.0:
        raise SingularityError("cone density is singular at y = 0 when eps = 0")
    out = beta * beta * (eps + y) ** (beta - 1.0)
    return out if out.ndim else float(out)


def section_norm2(sigma) -> np.ndarray:
    """|S|^2 = 4 sigma (1 - sigma), written symmetrically to keep pole accuracy."""
    sigma = np.asarray(sigma, dtype=float)
    return S_NORM * np.minimum(sigma, 1.0 - sigma) * np.maximum(sigma, 1.0 - sigma)


def model_flux(beta: float, eps: float, sigma) -> np.ndarray:
    """Exact flux sigma (1 - sigma) d/dsigma chi_beta(eps + |S|^2).

    Equals beta (1 - 2 sigma) ((eps + |S|^2)^beta - eps^beta); at eps = 0 this
    is the flux of |S|^(2 beta).
    """
    s2 = section_norm2(sigma)
    sigma = np.asarray(sigma, dtype=float)
    if eps == 0.0:
        bump = s2**beta
    else:
        bump = eps**beta * np.expm1(beta * np.log1p(s2 / eps))
    return beta * (1.0 - 2.0 * sigma) * bump


# ---------------------------------------------------------------------------
# geometry datum


AUTO_N_MARGIN = 1.0 / 3.0


def _auto_N(beta: float, eps: float, grid: RadialGrid) -> float:
    # eps-independent start: the eps = 0 model density keeps 1/3 of omega_0
    corr0 = grid.ddbar_from_flux(model_flux(beta, 0.0, grid.midpoints))
    N = max(-np.min(corr0), 1e-12) / ((1.0 - AUTO_N_MARGIN) * M0)
    if eps > 0.0:
        corr = grid.ddbar(chi_eval(beta, eps, section_norm2(grid.nodes)))
        while np.min(M0 + corr / N) < 0.1 * M0:
            N *= 2.0
            if N > 1e12:
                raise PositivityError("no admissible N found")
    return float(N)


@dataclass(frozen=True, eq=False)
class ConeGeometry:
    """Immutable problem datum.

    ``N=None`` picks the N for which the eps = 0 model density bottoms out at
    one third of the omega_0 density, doubled if the sampled omega_eps density
    then dips below 10% of it; ``delta=None`` sets delta = 1/N so
    that omega_eps converges to omega_D as eps -> 0; ``rho_exp=None`` uses beta/4.
    """

    beta: float
    eps: float
    grid: RadialGrid
    N: float | None = None
    delta: float | None = None
    rho_exp: float | None = None
    s_norm: float = field(default=S_NORM)

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise GeometryError(f"beta must lie in (0, 1], got {self.beta}")
        if not 0.0 <= self.eps <= 1.0:
            raise GeometryError(f"eps must lie in [0, 1], got {self.eps}")
        if self.s_norm != S_NORM:
            raise GeometryError("only the normalisation sup |S|^2 = 1 is supported")
        if self.N is None:
            object.__setattr__(self, "N", _auto_N(self.beta, self.eps, self.grid))
        if self.N <= 0:
            raise GeometryError("N must be positive")
        if self.delta is None:
            object.__setattr__(self, "delta", 1.0 / self.N)
        if self.delta < 0:
            raise GeometryError("delta must be nonnegative")
        if self.rho_exp is None:
            object.__setattr__(self, "rho_exp", 0.25 * self.beta)
        if not 0.0 < self.rho_exp < self.beta:
            raise GeometryError(f"rho_exp must lie in (0, beta), got {self.rho_exp}")
        # validates positivity of omega_eps at construction
        self.omega_eps_density()

    def with_eps(self, eps: float) -> "ConeGeometry":
        return ConeGeometry(self.beta, eps, self.grid, self.N, self.delta, self.rho_exp)

    def describe(self) -> dict:
        return {
            "beta": self.beta,
            "eps": self.eps,
            "N": self.N,
            "delta": self.delta,
            "rho_exp": self.rho_exp,
            "grid": self.grid.label,
            "grid_n": self.grid.size,
        }

    # -- sampled background fields -------------------------------------------

    @property
    def sigma(self) -> np.ndarray:
        return self.grid.nodes

    @cached_property
    def S2(self) -> np.ndarray:
        return section_norm2(self.grid.nodes)

    @cached_property
    def m0(self) -> np.ndarray:
        return np.full(self.grid.size, M0)

    @cached_property
    def log_S2_eps(self) -> np.ndarray:
        """log(|S|^2 + eps); -inf at the poles when eps = 0."""
        with np.errstate(divide="ignore"):
            return np.log(self.S2 + self.eps)

    @cached_property
    def psi_beta(self) -> np.ndarray:
        return chi_eval(self.beta, self.eps, self.S2)

    @cached_property
    def _m_eps(self) -> np.ndarray:
        if self.eps == 0.0:
            return self.m0 + self.grid.ddbar_from_flux(model_flux(self.beta, 0.0, self.grid.midpoints)) / self.N
        return self.m0 + self.grid.ddbar(self.psi_beta) / self.N

    @cached_property
    def _m_D(self) -> np.ndarray:
        return self.m0 + self.delta * self.grid.ddbar_from_flux(model_flux(self.beta, 0.0, self.grid.midpoints))

    @cached_property
    def _barrier_default(self) -> RadialField:
        return RadialField(chi_eval(self.rho_exp, self.eps, self.S2), "potential")

    def omega_eps_density(self) -> RadialField:
        """omega_eps = omega_0 + (1/N) i ddbar chi_beta(eps + |S|^2)."""
        m = self._m_eps
        if np.any(m <= 0.0):
            i = int(np.argmin(m))
            raise PositivityError(
                f"N too small: omega_eps density {m[i]:.3e} <= 0 at node {i} (sigma={self.sigma[i]:.3e})"
            )
        return RadialField(m, "density")

    def donaldson_density(self) -> RadialField:
        """omega_D = omega_0 + delta i ddbar |S|^(2 beta)."""
        m = self._m_D
        if np.any(m <= 0.0):
            i = int(np.argmin(m))
            raise PositivityError(f"delta too large: omega_D density {m[i]:.3e} <= 0 at node {i}")
        return RadialField(m, "density")

    def barrier_psi(self, rho_exp: float | None = None, node: int | None = None):
        """Psi_{eps,rho} = chi_rho(eps + |S|^2), as a field or at one node."""
        if rho_exp is None:
            return self._barrier_default if node is None else float(self._barrier_default.values[node])
        rho = rho_exp
        if not 0.0 < rho <= 1.0:
            raise ChiDomainError(f"barrier exponent must lie in (0, 1], got {rho}")
        if node is not None:
            return float(chi_eval(rho, self.eps, self.S2[node]))
        return RadialField(chi_eval(rho, self.eps, self.S2), "potential")

    def cone_model_density(self) -> np.ndarray:
        """sigma-density of the standard cone beta^2 |z|^(2 beta - 2) i dz ^ dzbar near sigma = 0.

        Infinite at the pole itself for beta < 1.
        """
        s = self.sigma
        with np.errstate(divide="ignore", invalid="ignore"):
            y = s / (1.0 - s)
            return self.beta**2 * y ** (self.beta - 1.0) / (1.0 - s) ** 2

    def area0(self) -> float:
        return self.grid.area(self.m0)


def omega_eps_density(geom: ConeGeometry) -> RadialField:
    return geom.omega_eps_density()


def donaldson_density(geom: ConeGeometry) -> RadialField:
    return geom.donaldson_density()


def barrier_psi(geom: ConeGeometry, rho_exp: float | None = None, node: int | None = None):
    return geom.barrier_psi(rho_exp, node)


def trace_ratio(a, b) -> RadialField:
    """tr_a b for n = 1: the pointwise density ratio b / a."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a <= 0.0) or np.any(b <= 0.0):
        raise PositivityError("trace ratio needs strictly positive densities")
    return RadialField(b / a, "density")


def ricci_density(grid: RadialGrid, m) -> np.ndarray:
    """sigma-density of Ric(omega) = -i ddbar log g with g = m (1 - sigma)^2.

    The smooth factor (1 - sigma)^2 is handled analytically
    (i ddbar log(1 - sigma) = -1), leaving 2 - i ddbar log m.
    """
    return 2.0 - grid.ddbar(np.log(np.asarray(m, dtype=float)))


def compute_h_rhs(geom: ConeGeometry) -> np.ndarray:
    """sigma-density of beta omega_0 - Ric(omega_0) + (1 - beta) Theta_h.

    Theta_h = -i ddbar log(4 (1 - sigma)^2) = 2, the density of omega_0.
    """
    theta = np.full(geom.grid.size, 2.0)
    return geom.beta * geom.m0 - ricci_density(geom.grid, geom.m0) + (1.0 - geom.beta) * theta


def compute_h(geom: ConeGeometry, return_residual: bool = False):
    """Ricci potential h with i ddbar h = beta omega_0 - Ric(omega_0) + (1-beta) Theta_h.

    This is the sign that makes the potential flow equivalent to the current
    equation.  Normalised to mean zero against omega_0.
    """
    rhs = compute_h_rhs(geom)
    h = geom.grid.solve_ddbar(rhs)
    h -= geom.grid.mean(h, geom.m0)
    res = float(np.max(np.abs(geom.grid.ddbar(h) - rhs)))
    field_ = RadialField(h, "potential")
    return (field_, res) if return_residual else field_


def ke_log_density(beta: float, sigma) -> np.ndarray:
    """F = log(|S|^(2 - 2 beta) omega_KE / omega_0) for the football metric.

    The conical Kahler-Einstein metric with cone angle 2 pi beta at both poles
    and area 4 pi has g = 2 beta y^(beta-1) / (1 + y^beta)^2.  F is bounded and
    symmetric under sigma -> 1 - sigma.
    """
    sigma = np.asarray(sigma, dtype=float)
    t = np.minimum(sigma, 1.0 - sigma)
    y = t / (1.0 - t)
    return (
        math.log(beta)
        + (1.0 - beta) * math.log(4.0)
        - 2.0 * beta * np.log1p(-t)
        - 2.0 * np.log1p(y**beta)
    )
