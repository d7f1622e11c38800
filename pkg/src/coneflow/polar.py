"""Polar coordinates for the regularised cone metric.

For omega_{beta,eps} = i ddbar chi_beta(eps + |z|^2) the radial coordinate

    ds/drho = beta / (rho^2 + eps)^((1 - beta)/2),    s(0) = 0,

puts the metric in the form  ds^2 + a(s) s^2 dtheta^2  (up to the factor
beta^2 in the angular part) with

    a = beta^2 rho^2 / ((rho^2 + eps)^(1 - beta) s^2) = beta^2 / u^2,
    u = v / rho,   v = (rho^2 + eps)^((1 - beta)/2) s,

and beta^2 < a <= 1.  The ODE is stiff-free but its scale near rho = 0 is
sqrt(eps); it is integrated in xi = asinh(rho / sqrt(eps)), where

    ds/dxi = beta eps^(beta/2) cosh(xi)^beta

is analytic with unit scale.  The classical fourth-order one-step method on a
right-hand side independent of s reduces to composite Simpson, which is what
is used.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .records import write_csv

BOUND_TOL = 1e-9


class ChartError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PolarChart:
    rho_nodes: np.ndarray
    s_vals: np.ndarray
    a_vals: np.ndarray
    u_vals: np.ndarray
    beta: float
    eps: float
    step: float

    @property
    def rho_max(self) -> float:
        return float(self.rho_nodes[-1])

    @property
    def branch(self) -> str:
        if self.beta == 1.0:
            return "euclidean"
        if self.eps == 0.0:
            return "exact-cone"
        return "regularised"

    def to_csv(self, path):
        return write_csv(path, {"rho": self.rho_nodes, "s": self.s_vals, "a": self.a_vals, "u": self.u_vals})


def _validate(beta: float, eps: float, rho_max: float, step: float):
    if not 0.0 < beta <= 1.0:
        raise ChartError(f"beta must lie in (0, 1], got {beta}")
    if eps < 0.0 or not math.isfinite(eps):
        raise ChartError(f"eps must be finite and nonnegative, got {eps}")
    if not rho_max > 0.0:
        raise ChartError(f"rho_max must be positive, got {rho_max}")
    if not step > 0.0:
        raise ChartError(f"step must be positive, got {step}")


def _cosh_pow(beta: float, xi):
    return np.cosh(xi) ** beta


def _u_of(beta: float, xi, S):
    # u = beta cosh^(1-beta) S / sinh, with S = int_0^xi cosh^beta
    return beta * np.cosh(xi) ** (1.0 - beta) * S / np.sinh(xi)


def integrate_polar(beta: float, eps: float, rho_max: float = 1.0, step: float = 1e-3) -> PolarChart:
    """Build the chart on (0, rho_max].

    ``step`` is the step in the stretched variable xi = asinh(rho/sqrt(eps))
    (for eps = 0 or beta = 1 it is the rho-spacing of the sampled closed form).
    """
    _validate(beta, eps, rho_max, step)
    if beta == 1.0 or eps == 0.0:
        n = max(2, int(math.ceil(rho_max / step)))
        rho = np.linspace(rho_max / n, rho_max, n)
        if beta == 1.0:
            s = rho.copy()
            u = np.ones_like(rho)
        else:
            s = rho**beta
            u = np.ones_like(rho)
        a = beta * beta / u**2
        return PolarChart(rho, s, a, u, beta, eps, step)

    xi_max = math.asinh(rho_max / math.sqrt(eps))
    n = max(2, int(math.ceil(xi_max / step - 1e-9)))
    xi = np.linspace(0.0, xi_max, n + 1)
    h = xi_max / n
    f = _cosh_pow(beta, xi)
    fmid = _cosh_pow(beta, xi[:-1] + 0.5 * h)
    S = np.concatenate(([0.0], np.cumsum(h / 6.0 * (f[:-1] + 4.0 * fmid + f[1:]))))
    xi, S = xi[1:], S[1:]
    rho = math.sqrt(eps) * np.sinh(xi)
    rho[-1] = rho_max
    s = beta * eps ** (0.5 * beta) * S
    u = _u_of(beta, xi, S)
    a = beta * beta / u**2
    return PolarChart(rho, s, a, u, beta, eps, h)


def _s_at(chart: PolarChart, rho: float) -> tuple[float, float]:
    """(s, u) at an arbitrary rho by one Simpson step from the nearest node below."""
    beta, eps = chart.beta, chart.eps
    if chart.branch != "regularised":
        s = rho if beta == 1.0 else rho**beta
        return s, 1.0
    xi = math.asinh(rho / math.sqrt(eps))
    xs = np.arcsinh(chart.rho_nodes / math.sqrt(eps))
    k = int(np.searchsorted(xs, xi, side="right")) - 1
    if k < 0:
        x0, S0 = 0.0, 0.0
    else:
        x0, S0 = float(xs[k]), float(chart.s_vals[k] / (beta * eps ** (0.5 * beta)))
    h = xi - x0
    S = S0 + h / 6.0 * (math.cosh(x0) ** beta + 4.0 * math.cosh(x0 + 0.5 * h) ** beta + math.cosh(xi) ** beta)
    s = beta * eps ** (0.5 * beta) * S
    return s, float(_u_of(beta, xi, S))


def coefficient_a(chart: PolarChart, rho: float) -> float:
    """a_eps at ``rho``; refuses to extrapolate beyond the chart."""
    if not 0.0 < rho <= chart.rho_max * (1.0 + 1e-15):
        raise ChartError(f"rho={rho} lies outside the chart range (0, {chart.rho_max}]")
    _, u = _s_at(chart, float(rho))
    a = chart.beta**2 / u**2
    if not chart.beta**2 - BOUND_TOL < a <= 1.0 + BOUND_TOL:
        raise ArithmeticError(f"a={a!r} violates beta^2 < a <= 1 at rho={rho}")
    return a


def comparison_check(chart: PolarChart) -> dict:
    """Check beta <= u < 1, equivalently beta rho <= v and a > beta^2."""
    u = chart.u_vals
    v = u * chart.rho_nodes
    degenerate = chart.branch != "regularised"
    lower_ok = bool(np.all(u >= chart.beta - BOUND_TOL))
    upper_ok = bool(np.all(u < 1.0)) or degenerate
    return {
        "beta": chart.beta,
        "eps": chart.eps,
        "branch": chart.branch,
        "degenerate": degenerate,
        "u_min": float(np.min(u)),
        "u_max": float(np.max(u)),
        "min_margin_one_minus_u": float(np.min(1.0 - u)),
        "min_margin_v_minus_beta_rho": float(np.min(v - chart.beta * chart.rho_nodes)),
        "passed": lower_ok and upper_ok,
    }


def quasi_isometry_certificate(chart: PolarChart) -> dict:
    """Pinching beta^2 omega_E < pulled-back metric <= omega_E, measured through a."""
    a = chart.a_vals
    b2 = chart.beta**2
    lo, hi = float(np.min(a)), float(np.max(a))
    if chart.branch == "regularised":
        lower_ok = lo > b2 - BOUND_TOL
    else:
        lower_ok = lo >= b2 - BOUND_TOL
    return {
        "beta": chart.beta,
        "eps": chart.eps,
        "branch": chart.branch,
        "lower_pinching": lo,
        "upper_pinching": hi,
        "lower_margin": lo - b2,
        "upper_margin": 1.0 - hi,
        "passed": bool(lower_ok and hi <= 1.0 + BOUND_TOL),
    }


def refinement_error(beta: float, eps: float, rho_max: float = 1.0, step: float = 1e-3) -> float:
    """max |a(step) - a(step/2)| over the coarse nodes."""
    coarse = integrate_polar(beta, eps, rho_max, step)
    fine = integrate_polar(beta, eps, rho_max, coarse.step / 2.0)
    if coarse.branch != "regularised":
        return float(np.max(np.abs(coarse.a_vals - np.interp(coarse.rho_nodes, fine.rho_nodes, fine.a_vals))))
    # the fine grid contains every coarse node
    return float(np.max(np.abs(coarse.a_vals - fine.a_vals[1::2])))
