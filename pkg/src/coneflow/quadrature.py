"""Evaluation of the regularising potential chi_beta(eps + y).

    chi_beta(eps + y) = beta * int_0^y ((eps + x)^beta - eps^beta) / x dx

The integrand is only C^0 at x = 0 when eps = 0 and has a boundary layer of
width eps otherwise.  Writing x = eps * e^tau turns the integral into

    beta * eps^beta * int_{-inf}^{log(y/eps)} ((1 + e^tau)^beta - 1) dtau

whose integrand is analytic with unit scale in tau.  The lower tail below
tau_lo is summed with a two-term series, the rest by composite Gauss-Legendre
panels whose count is doubled until two panel counts agree.
"""
from __future__ import annotations

import numpy as np

_TAIL_DEPTH = 40.0
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(12)


class ChiDomainError(ValueError):
    pass


def _tail(beta: float, t_lo: np.ndarray) -> np.ndarray:
    # int_{-inf}^{t_lo} (1+e^t)^beta - 1 dt for e^{t_lo} << 1
    e = np.exp(t_lo)
    return beta * e + 0.25 * beta * (beta - 1.0) * e * e


def _panel_sum(beta: float, lo: np.ndarray, hi: np.ndarray, panels: int) -> np.ndarray:
    width = (hi - lo) / panels
    k = np.arange(panels)
    left = lo[:, None] + width[:, None] * k[None, :]
    mid = left + 0.5 * width[:, None]
    tau = mid[:, :, None] + 0.5 * width[:, None, None] * _GL_NODES[None, None, :]
    f = np.expm1(beta * np.log1p(np.exp(tau)))
    return 0.5 * width * np.einsum("ijk,k->i", f, _GL_WEIGHTS)


def _scaled_integral(beta: float, upper: np.ndarray, rtol: float) -> np.ndarray:
    """J(T) = int_{-inf}^T ((1+e^t)^beta - 1) dt, vectorised over T."""
    lo = np.minimum(upper, 0.0) - _TAIL_DEPTH
    panels = max(4, int(np.ceil(np.max(upper - lo, initial=1.0))))
    prev = _panel_sum(beta, lo, upper, panels)
    for _ in range(12):
        panels *= 2
        cur = _panel_sum(beta, lo, upper, panels)
        if np.all(np.abs(cur - prev) <= rtol * np.abs(cur) + 1e-300):
            return cur + _tail(beta, lo)
        prev = cur
    raise ArithmeticError("chi quadrature did not converge")


def chi_eval(beta: float, eps: float, y, rtol: float = 1e-13):
    """Return chi_beta(eps + y); vectorised over ``y``.

    Relative accuracy is about ``rtol``.  ``beta == 1`` and ``eps == 0`` use the
    closed forms y and y**beta.
    """
    if not 0.0 < beta <= 1.0:
        raise ChiDomainError(f"beta must lie in (0, 1], got {beta}")
    if eps < 0.0:
        raise ChiDomainError(f"eps must be nonnegative, got {eps}")
    y_arr = np.asarray(y, dtype=float)
    if np.any(y_arr < 0.0) or not np.all(np.isfinite(y_arr)):
        raise ChiDomainError("y must be finite and nonnegative")

    if beta == 1.0:
        out = y_arr.copy()
    elif eps == 0.0:
        out = y_arr**beta
    else:
        out = np.zeros_like(y_arr)
        pos = y_arr > 0.0
        if np.any(pos):
            upper = np.log(y_arr[pos] / eps)
            out[pos] = beta * eps**beta * _scaled_integral(beta, upper, rtol)
    return out if out.ndim else float(out)


def chi_derivative(beta: float, eps: float, y):
    """d/dy chi_beta(eps + y) = beta * ((eps + y)^beta - eps^beta) / y."""
    y_arr = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        if eps > 0.0:
            # (eps+y)^beta - eps^beta without cancellation
            diff = eps**beta * np.expm1(beta * np.log1p(y_arr / eps))
            out = np.where(y_arr > 0.0, beta * diff / y_arr, beta * beta * eps ** (beta - 1.0))
        else:
            out = beta * y_arr ** (beta - 1.0)
    return out if out.ndim else float(out)
