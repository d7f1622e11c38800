"""Measured constants of the a priori estimates.

Conventions (n = 1):

* traces: tr_{omega_eps} omega_phi is the density ratio m_phi / m_eps;
* scalar curvature R = tr_omega Ric(omega), so the round sphere of area 4 pi has R = 1;
* the Poincare constant uses the Riemannian Laplacian (twice the complex one),
  so the round sphere of area 4 pi has first eigenvalue 2 and constant 1/sqrt(2);
* distances are meridian arclengths of the chosen metric.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .flow import FlowState, Trajectory
from .geometry import ConeGeometry, PositivityError, RadialField, ricci_density
from .grid import RadialGrid

FP_SLACK_ULPS = 4


# ---------------------------------------------------------------------------
# pointwise monitors


def trace_monitors(state: FlowState, geom: ConeGeometry) -> tuple[RadialField, RadialField, RadialField]:
    """(tr_{omega_eps} omega_phi, tr_{omega_phi} omega_eps, det ratio); trace = det for n = 1."""
    m = np.asarray(state.density.values)
    m_eps = geom.omega_eps_density().values
    if np.any(m <= 0):
        raise PositivityError(f"nonpositive density at node {int(np.argmin(m))}")
    ratio = m / m_eps
    return RadialField(ratio, "density"), RadialField(1.0 / ratio, "density"), RadialField(ratio, "density")


def eigenvalue_inequality(lambdas, return_sides: bool = False):
    """(sum 1/lambda_i)^(n-1) >= sum lambda_i / prod lambda_k for positive tuples.

    Vectorised over leading axes of ``lambdas`` (shape (..., n)).  The
    comparison allows 4 ulps of the larger side per factor of n.
    """
    lam = np.asarray(lambdas, dtype=float)
    if lam.ndim == 0 or lam.shape[-1] < 2 or lam.shape[-1] > 16:
        raise ValueError("need tuples of length 2..16")
    if np.any(~np.isfinite(lam)) or np.any(lam <= 0):
        raise ValueError("eigenvalues must be finite and positive")
    n = lam.shape[-1]
    lhs = np.sum(1.0 / lam, axis=-1) ** (n - 1)
    rhs = np.sum(lam, axis=-1) / np.prod(lam, axis=-1)
    slack = FP_SLACK_ULPS * n * np.spacing(np.maximum(lhs, rhs))
    ok = lhs >= rhs - slack
    if return_sides:
        return ok, lhs, rhs
    return bool(ok) if ok.ndim == 0 else ok


@dataclass(frozen=True, eq=False)
class BarrierField:
    field: RadialField
    argmax: int
    inv_trace_at_max: float
    A: float
    B: float

    @property
    def max(self) -> float:
        return float(self.field.values[self.argmax])


def barrier_quantity(state: FlowState, geom: ConeGeometry, A: float, B: float) -> BarrierField:
    """log tr_{omega_eps} omega_phi + B Psi_{eps,rho} - A phi, with its argmax.

    At the argmax the inverse trace tr_{omega_phi} omega_eps is reported; the
    second-order argument bounds it there.
    """
    if A < 0 or B < 0:
        raise ValueError("A and B must be nonnegative")
    tr, inv_tr, _ = trace_monitors(state, geom)
    psi = geom.barrier_psi().values
    q = np.log(tr.values) + B * psi - A * np.asarray(state.phi.values)
    i = int(np.argmax(q))
    return BarrierField(RadialField(q, "potential"), i, float(inv_tr.values[i]), A, B)


def default_barrier_constants(sup_phi_dot: float) -> tuple[float, float]:
    return 2.0 * (1.0 + sup_phi_dot), 1.0


def scalar_curvature(density, grid: RadialGrid) -> RadialField:
    """R = tr_omega Ric(omega) = (2 - i ddbar log m) / m."""
    m = np.asarray(density, dtype=float)
    if np.any(m <= 0):
        raise PositivityError("scalar curvature needs a positive density")
    return RadialField(ricci_density(grid, m) / m, "potential")


def curvature_time_product(state: FlowState, grid: RadialGrid) -> float:
    """min_x t R(x, t); only defined for t > 0."""
    if state.t <= 0:
        raise ValueError("t R is only monitored for t > 0")
    return state.t * float(np.min(scalar_curvature(state.density.values, grid).values))


def volume_rate_check(traj: Trajectory, beta: float, a0: float | None = None, C: float = 1.0, tol: float = 1e-6) -> dict:
    """Check max_x d/dt log m <= C/t + beta (n = 1) at every step after the first.

    The step average of the rate is compared with the bound at the left end of
    the step, where the bound is largest.  Also reports the constant-C form:
    C_const is the sup of the rate over [a0, T] and ``const_form_flagged`` lists
    the earlier times at which the rate exceeds it.
    """
    d = traj.diagnostics
    t = d["t"]
    rate = d["vol_rate_max"]
    if t.size < 3:
        raise ValueError("need at least two steps")
    t_left = t[1:-1]
    r = rate[2:]
    C_over_t = float(np.max(t_left * (r - beta)))
    ok = bool(np.all(r <= C / t_left + beta + tol))
    a0 = 0.1 * t[-1] if a0 is None else a0
    late = t[1:] >= a0
    C_const = float(np.max(rate[1:][late])) if np.any(late) else float("nan")
    early = (~late) & (rate[1:] > C_const)
    flagged = t[1:][early]
    return {
        "C": C,
        "C_over_t": C_over_t,
        "passed": ok,
        "C_const": C_const,
        "a0": a0,
        "const_form_flagged": int(flagged.size),
        "const_form_flagged_until": float(flagged.max()) if flagged.size else 0.0,
    }


# ---------------------------------------------------------------------------
# Holder seminorms


def _pair_indices(n: int, decimate: int, mask: np.ndarray | None):
    idx = np.arange(0, n, decimate)
    if mask is not None:
        idx = idx[mask[idx]]
    adj = np.arange(n - 1)
    if mask is not None:
        adj = adj[mask[adj] & mask[adj + 1]]
    return idx, adj


def holder_seminorm(u, x, alpha: float, mask=None, decimate: int = 4) -> float:
    """sup |u_i - u_j| / |x_i - x_j|^alpha over the deterministic pair set.

    Pairs: all pairs among nodes with index divisible by ``decimate`` plus
    every adjacent pair; ``mask`` restricts both to a sub-domain.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    u = np.asarray(u, dtype=float)
    x = np.asarray(x, dtype=float)
    mask = None if mask is None else np.asarray(mask, dtype=bool)
    idx, adj = _pair_indices(u.size, decimate, mask)
    if idx.size < 2 and adj.size == 0:
        raise ValueError("empty domain for the Holder seminorm")
    best = 0.0
    if adj.size:
        du = np.abs(u[adj + 1] - u[adj])
        dx = np.abs(x[adj + 1] - x[adj])
        best = max(best, float(np.max(du / dx**alpha)))
    if idx.size >= 2:
        du = np.abs(u[idx][:, None] - u[idx][None, :])
        dx = np.abs(x[idx][:, None] - x[idx][None, :])
        off = dx > 0
        best = max(best, float(np.max(du[off] / dx[off] ** alpha)))
    return best


def _time_indices(nt: int, cap: int) -> np.ndarray:
    if nt <= cap:
        return np.arange(nt)
    return np.unique(np.round(np.linspace(0, nt - 1, cap)).astype(int))


def parabolic_holder_seminorm(slab, x, times, alpha: float, mask=None, decimate: int = 4, time_cap: int = 24) -> float:
    """Parabolic analogue with distance max(|x - y|, |t - s|^(1/2)).

    Pairs: the spatial pair set within each sampled slice, every pair of
    sampled slices over the decimated nodes, and consecutive slices at each
    node.  At most ``time_cap`` slices are sampled (evenly, endpoints kept).
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    slab = np.asarray(slab, dtype=float)
    times = np.asarray(times, dtype=float)
    if slab.ndim != 2 or slab.shape[0] == 0:
        raise ValueError("empty slab")
    x = np.asarray(x, dtype=float)
    mask = None if mask is None else np.asarray(mask, dtype=bool)
    tk = _time_indices(slab.shape[0], time_cap)
    idx, _ = _pair_indices(slab.shape[1], decimate, mask)
    cols = np.arange(slab.shape[1]) if mask is None else np.flatnonzero(mask)
    best = 0.0
    for k in tk:
        best = max(best, holder_seminorm(slab[k], x, alpha, mask, decimate))
    dx = np.abs(x[idx][:, None] - x[idx][None, :])
    for a_i, k in enumerate(tk):
        for l in tk[a_i + 1:]:
            dt = math.sqrt(abs(times[l] - times[k]))
            dist = np.maximum(dx, dt)
            du = np.abs(slab[k, idx][:, None] - slab[l, idx][None, :])
            best = max(best, float(np.max(du / dist**alpha)))
    if slab.shape[0] > 1 and cols.size:
        dt = np.sqrt(np.abs(np.diff(times)))[:, None]
        du = np.abs(np.diff(slab[:, cols], axis=0))
        best = max(best, float(np.max(du / dt**alpha)))
    return best


def sigma_mask(grid: RadialGrid, delta: float) -> np.ndarray:
    """Nodes outside the delta-neighbourhood of the cone points (in sigma)."""
    s = grid.nodes
    return (s >= delta) & (s <= 1.0 - delta)


# ---------------------------------------------------------------------------
# Poincare constant


def poincare_constant(geom: ConeGeometry, density=None) -> float:
    """1 / sqrt(lambda_1) for the Riemannian Laplacian of omega_eps (or ``density``).

    lambda_1 minimises the Rayleigh quotient over mean-zero fields; for the
    tridiagonal reduction this is the second eigenvalue of the symmetric pencil
    (stiffness, 1/2 * mass), computed directly.
    """
    grid = geom.grid
    m = geom.omega_eps_density().values if density is None else np.asarray(density, dtype=float)
    return poincare_constant_grid(grid, m)


def poincare_constant_grid(grid: RadialGrid, m) -> float:
    m = np.asarray(m, dtype=float)
    if np.any(m <= 0):
        raise PositivityError("Poincare constant needs a positive density")
    K = grid.stiffness_banded()
    mass = 0.5 * grid.weights * m
    s = 1.0 / np.sqrt(mass)
    d = K[1] * s * s
    e = K[0, 1:] * s[:-1] * s[1:]
    vals = eigh_tridiagonal(d, e, eigvals_only=True, select="i", select_range=(0, 1))
    lam1 = float(vals[1])
    if not lam1 > 0:
        raise ArithmeticError("first nonzero eigenvalue is not positive")
    return 1.0 / math.sqrt(lam1)


# ---------------------------------------------------------------------------
# comparison of two flows with different smoothing


def uniqueness_compare(traj1: Trajectory, traj2: Trajectory, a: float, p: float, tol: float = 1e-9) -> dict:
    """Barrier comparison of two flows from the same initial potential.

    psi = phi_1 + a |S|^(2p) - phi_2 satisfies, at its spatial maximum,
    d/dt psi <= beta psi + a C with the measured
    C = sup[-kappa i ddbar|S|^(2p) - beta |S|^(2p) + (1-beta) log((|S|^2+eps1)/(|S|^2+eps2)) / a],
    kappa = log(m1/m2)/(m1 - m2).  Hence
    sup psi(t) <= e^{beta t} sup psi(0) + (a C/beta)(e^{beta t} - 1) <= (sup psi(0) + a C/beta) e^{beta t}.
    The ledger repeats this for a, a/2, a/4 and extrapolates sup(phi_1 - phi_2) linearly to a = 0.
    """
    if traj1.times.shape != traj2.times.shape or np.any(traj1.times != traj2.times):
        raise ValueError("trajectories must share their stored times")
    if traj1.phi.shape != traj2.phi.shape:
        raise ValueError("trajectories must share the grid")
    if a <= 0 or p <= 0:
        raise ValueError("a and p must be positive")
    beta = traj1.geometry["beta"]
    if traj2.geometry["beta"] != beta:
        raise ValueError("trajectories must share beta")
    eps1, eps2 = traj1.geometry["eps"], traj2.geometry["eps"]
    grid = traj1.grid
    s2 = 4.0 * np.minimum(grid.nodes, 1 - grid.nodes) * np.maximum(grid.nodes, 1 - grid.nodes)
    sp = s2**p
    Lsp = grid.ddbar(sp)
    phi1 = traj1.omega0_potential()
    phi2 = traj2.omega0_potential()
    m1, m2 = traj1.density, traj2.density
    dm = m1 - m2
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = np.where(np.abs(dm) > 1e-12 * m2, np.log(m1 / m2) / dm, 1.0 / m2)
    log_term = (1.0 - beta) * np.log((s2 + eps1) / (s2 + eps2))
    t = traj1.times
    growth = np.exp(beta * t)

    ledger = []
    for scale in (1.0, 0.5, 0.25):
        aa = a * scale
        psi = phi1 + aa * sp - phi2
        sup = psi.max(axis=1)
        C = float(np.max(-kappa * Lsp - beta * sp + log_term / aa))
        tight = growth * sup[0] + (aa * C / beta) * (growth - 1.0)
        envelope = (sup[0] + aa * max(C, 0.0) / beta) * growth
        ledger.append({
            "a": aa,
            "C": C,
            "sup0": float(sup[0]),
            "sup_max": float(sup.max()),
            "max_excess_tight": float(np.max(sup - tight)),
            "max_excess": float(np.max(sup - envelope)),
            "passed": bool(np.all(sup <= envelope + tol)),
        })
    a_vals = np.array([r["a"] for r in ledger])
    sups = np.array([r["sup_max"] for r in ledger])
    slope, intercept = np.polyfit(a_vals, sups, 1)
    direct = float(np.max(phi1 - phi2))
    return {
        "p": p,
        "ledger": ledger,
        "extrapolated_sup": float(intercept),
        "slope": float(slope),
        "sup_difference": direct,
        "envelope_passed": all(r["passed"] for r in ledger),
    }


# ---------------------------------------------------------------------------
# weak-flow certificate and the report


def weak_flow_certificate(traj: Trajectory, geom: ConeGeometry, delta: float, alpha: float) -> dict:
    """The three defining bullets of a weak conical flow, with measured constants.

    1. phi(t) is uniformly Holder-alpha in the omega_D distance (sampled slices);
    2. d phi/dt and both traces are bounded away from the cone points;
    3. omega_phi >= C omega_D with C > 0.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    grid = traj.grid
    m_D = geom.donaldson_density().values
    x = grid.arclength(m_D)
    mask = sigma_mask(grid, delta)
    phi = traj.omega0_potential()
    holder = max(holder_seminorm(phi[k], x, alpha) for k in _time_indices(len(traj), 24))
    m_eps = geom.omega_eps_density().values
    dens = np.asarray(traj.density, dtype=float)
    with np.errstate(divide="ignore"):
        ratio = dens[:, mask] / m_eps[mask]
        inv = np.where(ratio > 0, 1.0 / ratio, np.inf)
    sup_dot = float(np.max(np.abs(traj.phi_dot[:, mask])))
    trace_sup = float(np.max(ratio))
    inv_sup = float(np.max(inv))
    lower = float(np.min(dens / m_D))
    return {
        "delta": delta,
        "alpha": alpha,
        "holder": {"constant": holder, "passed": bool(np.isfinite(holder))},
        "bounds_off_divisor": {
            "sup_phi_dot": sup_dot,
            "trace_sup": trace_sup,
            "inv_trace_sup": inv_sup,
            "passed": bool(np.isfinite(sup_dot) and np.isfinite(trace_sup) and np.isfinite(inv_sup)),
        },
        "lower_bound": {"constant": lower, "passed": bool(lower > 0.0)},
        "passed": bool(np.isfinite(holder) and np.isfinite(sup_dot) and np.isfinite(inv_sup) and lower > 0.0),
    }


@dataclass(frozen=True)
class EstimateReport:
    trace_sup: float
    inv_trace_sup: float
    barrier_max: float
    barrier_A: float
    barrier_B: float
    R_t_min: float
    holder: dict
    poincare: float
    volume_rate: dict
    certificate: dict
    uniqueness: dict | None = field(default=None)

    def to_dict(self) -> dict:
        return asdict(self)


def build_report(traj: Trajectory, geom: ConeGeometry, alpha: float = 0.25, delta: float = 0.05) -> EstimateReport:
    d = traj.diagnostics
    sup_dot = float(np.max(d["sup_phi_dot"]))
    A, B = default_barrier_constants(sup_dot)
    barrier = max(barrier_quantity(traj.state(k), geom, A, B).max for k in range(len(traj)))
    grid = traj.grid
    x = grid.arclength(geom.donaldson_density().values)
    mask = sigma_mask(grid, delta)
    F = [np.log(traj.density[k] / geom.m0) + (1 - geom.beta) * np.log(geom.S2 + geom.eps) for k in range(len(traj))]
    holder = {
        "alpha": alpha,
        "phi": parabolic_holder_seminorm(traj.omega0_potential(), x, traj.times, alpha),
        "log_density_off_divisor": parabolic_holder_seminorm(np.array(F), x, traj.times, alpha, mask=mask),
    }
    return EstimateReport(
        trace_sup=float(np.max(d["trace_sup"])),
        inv_trace_sup=float(np.max(d["inv_trace_sup"])),
        barrier_max=float(barrier),
        barrier_A=A,
        barrier_B=B,
        R_t_min=float(np.min(d["t_R_min"][1:])) if d["t"].size > 1 else float("nan"),
        holder=holder,
        poincare=poincare_constant(geom),
        volume_rate=volume_rate_check(traj, geom.beta) if d["t"].size >= 3 else {},
        certificate=weak_flow_certificate(traj, geom, delta, alpha),
    )
