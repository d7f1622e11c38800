"""Rotationally symmetric reduction of the sphere to the interval sigma in [0, 1].

A rotation invariant (1,1)-form on CP^1 is stored through its *area density in
sigma*: with y = |z|^2 and sigma = y / (1 + y),

    omega = g(y) i dz ^ dzbar,    m(sigma) = g / (1 - sigma)^2,
    area(omega) = 2 pi int_0^1 m dsigma.

In these variables i ddbar f has sigma-density (sigma (1 - sigma) f')' and the
complex Laplacian is Delta_omega f = (sigma (1 - sigma) f')' / m.  The round
metric of area 4 pi has m = 2.

The discrete operator is a finite-volume stencil on nodes that include both
poles; the boundary fluxes vanish identically, so sum(V * L f) = 0 to rounding
and cohomology class (area) is preserved exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import solve_banded
from scipy.optimize import brentq

TWO_PI = 2.0 * np.pi


class GridError(ValueError):
    pass


def _tanh_map(xi: np.ndarray, stretch: float) -> np.ndarray:
    if stretch == 0.0:
        return xi.copy()
    return 0.5 * (1.0 + np.tanh(stretch * (2.0 * xi - 1.0)) / np.tanh(stretch))


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Nodes in sigma with finite-volume weights.

    ``weights[i]`` is the length of the control volume around node ``i`` so that
    ``TWO_PI * sum(weights * m * f)`` integrates ``f`` against the metric with
    sigma-density ``m``.
    """

    nodes: np.ndarray
    label: str = field(default="custom")

    def __post_init__(self):
        x = np.asarray(self.nodes, dtype=float)
        if x.ndim != 1 or x.size < 3:
            raise GridError("grid needs at least three nodes")
        if x[0] != 0.0 or x[-1] != 1.0:
            raise GridError("grid must contain both poles sigma = 0 and sigma = 1")
        if np.any(np.diff(x) <= 0.0):
            raise GridError("grid nodes must be strictly increasing")
        x.setflags(write=False)
        object.__setattr__(self, "nodes", x)

    @classmethod
    def uniform(cls, n: int) -> "RadialGrid":
        return cls(np.linspace(0.0, 1.0, n), label=f"uniform:{n}")

    @classmethod
    def graded(cls, n: int, pole_spacing: float) -> "RadialGrid":
        """Symmetric tanh-stretched grid whose first cell has width ``pole_spacing``.

        Falls back to the uniform grid when the requested spacing is not finer
        than 1/(n-1).
        """
        xi = np.linspace(0.0, 1.0, n)
        h = 1.0 / (n - 1)
        if pole_spacing >= h:
            return cls.uniform(n)

        def first_cell(k):
            return _tanh_map(np.array([h]), k)[0] - pole_spacing

        stretch = brentq(first_cell, 1e-9, 60.0, xtol=1e-14)
        sigma = _tanh_map(xi, stretch)
        sigma[0], sigma[-1] = 0.0, 1.0
        # enforce exact mirror symmetry
        sigma = 0.5 * (sigma + (1.0 - sigma[::-1]))
        return cls(sigma, label=f"graded:{n}:{pole_spacing:.6g}")

    @property
    def size(self) -> int:
        return self.nodes.size

    @cached_property
    def weights(self) -> np.ndarray:
        d = np.diff(self.nodes)
        w = np.zeros(self.size)
        w[:-1] += 0.5 * d
        w[1:] += 0.5 * d
        return w

    @cached_property
    def conductance(self) -> np.ndarray:
        """Face coefficients sigma(1-sigma)/dsigma at the n-1 interior faces."""
        mid = self.midpoints
        return mid * (1.0 - mid) / np.diff(self.nodes)

    @cached_property
    def theta(self) -> np.ndarray:
        """Polar angle of the round metric, sigma = sin^2(theta / 2)."""
        return 2.0 * np.arcsin(np.sqrt(self.nodes))

    # -- integration -------------------------------------------------------

    def integrate(self, f, density) -> float:
        """int f dvol for the metric with sigma-density ``density``."""
        return float(TWO_PI * np.sum(self.weights * np.asarray(density) * np.asarray(f)))

    def area(self, density) -> float:
        return float(TWO_PI * np.sum(self.weights * np.asarray(density)))

    def mean(self, f, density) -> float:
        return self.integrate(f, density) / self.area(density)

    # -- i ddbar -----------------------------------------------------------

    @cached_property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.nodes[1:] + self.nodes[:-1])

    def ddbar_from_flux(self, q) -> np.ndarray:
        """Cell averages of a density given its exact fluxes at the faces."""
        q = np.asarray(q, dtype=float)
        out = np.empty(self.size)
        out[0] = q[0]
        out[1:-1] = q[1:] - q[:-1]
        out[-1] = -q[-1]
        return out / self.weights

    def flux(self, f) -> np.ndarray:
        return self.conductance * np.diff(np.asarray(f, dtype=float))

    def ddbar(self, f) -> np.ndarray:
        """sigma-density of i ddbar f (finite volume, zero flux at the poles)."""
        return self.ddbar_from_flux(self.flux(f))

    def laplacian(self, f, density) -> np.ndarray:
        """Complex Laplacian Delta_omega f = tr_omega i ddbar f."""
        return self.ddbar(f) / np.asarray(density)

    def ddbar_banded(self) -> np.ndarray:
        """i ddbar as a (3, n) banded matrix in scipy's ``solve_banded`` layout."""
        c = self.conductance
        w = self.weights
        ab = np.zeros((3, self.size))
        ab[0, 1:] = c / w[:-1]
        ab[2, :-1] = c / w[1:]
        diag = np.zeros(self.size)
        diag[:-1] -= c
        diag[1:] -= c
        ab[1] = diag / w
        return ab

    def ddbar_dense(self) -> np.ndarray:
        ab = self.ddbar_banded()
        return np.diag(ab[1]) + np.diag(ab[0, 1:], 1) + np.diag(ab[2, :-1], -1)

    def stiffness_banded(self) -> np.ndarray:
        """Symmetric form -V * i ddbar in upper banded layout (2, n)."""
        c = self.conductance
        ab = np.zeros((2, self.size))
        ab[0, 1:] = -c
        diag = np.zeros(self.size)
        diag[:-1] += c
        diag[1:] += c
        ab[1] = diag
        return ab

    def solve_ddbar(self, rhs_density, mass_tol: float = 1e-9) -> np.ndarray:
        """Solve i ddbar u = rhs for u with zero mean against the weights.

        The system is singular with one-dimensional kernel (constants); it is
        solvable iff sum(V * rhs) = 0.  The solve integrates the flux face by
        face, which is the exact bidiagonal factorisation of the stencil.
        """
        r = np.asarray(rhs_density, dtype=float)
        mass = r * self.weights
        # floor at rounding level so an essentially zero load is accepted
        scale = max(np.sum(np.abs(mass)), 1e-6 * np.sum(self.weights))
        if abs(np.sum(mass)) > mass_tol * scale:
            raise GridError(
                f"right-hand side has net mass {np.sum(mass):.3e}; i ddbar u = rhs is not solvable"
            )
        q = np.cumsum(mass)[:-1]
        du = q / self.conductance
        u = np.concatenate(([0.0], np.cumsum(du)))
        return u - np.sum(self.weights * u) / np.sum(self.weights)

    def solve_shifted(self, diag_shift, coef, rhs) -> np.ndarray:
        """Solve (diag(diag_shift) - diag(coef) i ddbar) u = rhs (tridiagonal)."""
        # entry (i, j) lives at ab[1 + i - j, j]; rows are scaled by coef
        ab = self.ddbar_banded()
        coef = np.asarray(coef, dtype=float)
        band = np.zeros_like(ab)
        band[0, 1:] = -coef[:-1] * ab[0, 1:]
        band[1] = np.asarray(diag_shift) - coef * ab[1]
        band[2, :-1] = -coef[1:] * ab[2, :-1]
        return solve_banded((1, 1), band, rhs)

    # -- metric geometry ----------------------------------------------------

    def arclength(self, density) -> np.ndarray:
        """Meridian arclength from sigma = 0 for the metric with sigma-density m.

        ds = sqrt(m / 2) dtheta with sigma = sin^2(theta/2); trapezoidal rule
        in theta, exact for the round metric.
        """
        root = np.sqrt(np.asarray(density, dtype=float) / 2.0)
        seg = 0.5 * (root[1:] + root[:-1]) * np.diff(self.theta)
        return np.concatenate(([0.0], np.cumsum(seg)))

    def interpolate_to(self, other: "RadialGrid", values) -> np.ndarray:
        return np.interp(other.nodes, self.nodes, values)
