"""Time stepping of the perturbed potential flow.

With reference density m_ref and forcing G the flow reads

    d phi/dt = w(phi) := log(m_phi / m_ref) + beta phi + G,    m_phi = m_ref + i ddbar phi.

Reference ``omega_0``:  m_ref = m_0,     G = h + (1 - beta) log(|S|^2 + eps).
Reference ``omega_eps``: m_ref = m_eps, G = the same plus log(m_eps/m_0) + beta Psi/N;
its potential is the omega_0 potential minus Psi/N.

The step is implicit in w:

    phi^{n+1} = phi^n + tau w(phi^{n+1}),    tau = (1 - e^{-beta dt}) / beta.

At a positive maximum of w^{n+1} the discrete i ddbar is nonpositive, which
gives  max w^{n+1} <= e^{beta dt} max w^n  (and likewise for the minimum), so
the maximum principle for d phi/dt and the monotonicity of
sup |e^{-beta t} d phi/dt| hold exactly for the discrete flow.  The Newton
Jacobian  (1 - tau beta) I - tau diag(1/m_phi) i ddbar  is tridiagonal.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .grid import RadialGrid
from .geometry import ConeGeometry, GeometryError, RadialField, compute_h, ricci_density

SCHEMES = ("implicit", "semi-implicit")
REFERENCES = ("omega_0", "omega_eps")
MAX_PRINCIPLE_TOL = 1e-6
MONOTONE_TOL = 1e-8


class FlowError(RuntimeError):
    pass


class SolverFailure(FlowError):
    """Newton failed even at the smallest admissible step."""

    def __init__(self, message: str, t: float, suggested_dt: float | None = None):
        super().__init__(message)
        self.t = t
        self.suggested_dt = suggested_dt


class KahlerConeError(FlowError):
    pass


class MaximumPrincipleError(FlowError):
    pass


@dataclass(frozen=True)
class FlowConfig:
    dt: float = 1e-3
    T: float = 1.0
    scheme: str = "implicit"
    newton_tol: float = 1e-12
    newton_max_iter: int = 30
    reference: str = "omega_0"
    store_every: int = 10
    dt_floor: float = 1e-6

    def __post_init__(self):
        if not (self.dt > 0 and self.T > 0):
            raise ValueError("dt and T must be positive")
        if not (self.newton_tol > 0 and self.newton_max_iter > 0):
            raise ValueError("Newton tolerances must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.reference not in REFERENCES:
            raise ValueError(f"reference must be one of {REFERENCES}")
        if self.store_every < 1:
            raise ValueError("store_every must be at least 1")
        if not 0 < self.dt_floor <= self.dt:
            raise ValueError("dt_floor must lie in (0, dt]")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.T / self.dt)))


@dataclass(frozen=True, eq=False)
class FlowState:
    t: float
    phi: RadialField
    phi_dot: RadialField
    density: RadialField
    eps: float
    beta: float


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Stored time slices plus per-step diagnostics (every accepted outer step)."""

    times: np.ndarray
    phi: np.ndarray
    phi_dot: np.ndarray
    density: np.ndarray
    diagnostics: dict[str, np.ndarray]
    config: FlowConfig
    geometry: dict
    grid: RadialGrid = field(repr=False)
    offset: np.ndarray = field(repr=False)

    def state(self, k: int) -> FlowState:
        return FlowState(
            float(self.times[k]),
            RadialField(self.phi[k], "potential"),
            RadialField(self.phi_dot[k], "potential"),
            RadialField(self.density[k], "density"),
            self.geometry["eps"],
            self.geometry["beta"],
        )

    def __len__(self):
        return self.times.size

    @property
    def final(self) -> FlowState:
        return self.state(len(self) - 1)

    def omega0_potential(self) -> np.ndarray:
        """Stored potentials expressed against omega_0."""
        return self.phi + self.offset


# ---------------------------------------------------------------------------
# the equation


@dataclass(frozen=True, eq=False)
class _Equation:
    geom: ConeGeometry
    m_ref: np.ndarray
    G: np.ndarray
    offset: np.ndarray  # omega_0 potential minus this potential


def _equation(geom: ConeGeometry, reference: str) -> _Equation:
    h = compute_h(geom).values
    G0 = h + (1.0 - geom.beta) * np.log(geom.S2 + geom.eps)
    if reference == "omega_0":
        return _Equation(geom, geom.m0, G0, np.zeros(geom.grid.size))
    m_eps = geom.omega_eps_density().values
    psi = geom.psi_beta / geom.N
    return _Equation(geom, m_eps, G0 + np.log(m_eps / geom.m0) + geom.beta * psi, psi)


def _density(eq: _Equation, phi: np.ndarray) -> np.ndarray:
    return eq.m_ref + eq.geom.grid.ddbar(phi)


def _w(eq: _Equation, phi: np.ndarray, m: np.ndarray | None = None) -> np.ndarray:
    m = _density(eq, phi) if m is None else m
    return np.log(m / eq.m_ref) + eq.geom.beta * phi + eq.G


def _tau(beta: float, dt: float) -> float:
    return -math.expm1(-beta * dt) / beta


def _newton(eq: _Equation, phi_old: np.ndarray, tau: float, config: FlowConfig) -> np.ndarray | None:
    grid, beta = eq.geom.grid, eq.geom.beta
    phi = phi_old.copy()
    m = _density(eq, phi)
    if np.any(m <= 0):
        return None
    iters = 1 if config.scheme == "semi-implicit" else config.newton_max_iter
    for _ in range(iters):
        R = phi - phi_old - tau * _w(eq, phi, m)
        if config.scheme == "implicit" and np.max(np.abs(R)) <= config.newton_tol:
            return phi
        d = grid.solve_shifted(np.full(grid.size, 1.0 - tau * beta), tau / m, -R)
        lam = 1.0
        while True:
            trial = phi + lam * d
            m_trial = _density(eq, trial)
            if np.all(m_trial > 0):
                break
            lam *= 0.5
            if lam < 1e-4:
                return None
        phi, m = trial, m_trial
    if config.scheme == "semi-implicit":
        return phi
    R = phi - phi_old - tau * _w(eq, phi, m)
    return phi if np.max(np.abs(R)) <= config.newton_tol else None


def _advance(eq: _Equation, phi: np.ndarray, dt: float, t: float, config: FlowConfig) -> np.ndarray:
    """One outer step, splitting into halves on Newton failure down to dt_floor."""
    new = _newton(eq, phi, _tau(eq.geom.beta, dt), config)
    if new is not None:
        return new
    half = 0.5 * dt
    if half < config.dt_floor:
        raise SolverFailure(
            f"Newton failed at t={t:.6g} with dt={dt:.3g}; step floor {config.dt_floor:g} reached",
            t,
            suggested_dt=half,
        )
    mid = _advance(eq, phi, half, t, config)
    return _advance(eq, mid, half, t + half, config)


def _make_state(eq: _Equation, t: float, phi: np.ndarray) -> FlowState:
    m = _density(eq, phi)
    if np.any(m <= 0):
        i = int(np.argmin(m))
        raise KahlerConeError(f"density {m[i]:.3e} <= 0 at node {i}, t={t:.6g}")
    return FlowState(
        t,
        RadialField(phi, "potential"),
        RadialField(_w(eq, phi, m), "potential"),
        RadialField(m, "density"),
        eq.geom.eps,
        eq.geom.beta,
    )


def initial_state(geom: ConeGeometry, phi0, reference: str = "omega_0") -> FlowState:
    """State at t = 0 from an omega_0 potential (e.g. the smoothed initial potential)."""
    eq = _equation(geom, reference)
    return _make_state(eq, 0.0, np.asarray(phi0, dtype=float) - eq.offset)


def step(state: FlowState, geom: ConeGeometry, config: FlowConfig, dt: float | None = None) -> FlowState:
    """Advance one step; raises :class:`SolverFailure` with a suggested dt/2 on divergence."""
    eq = _equation(geom, config.reference)
    dt = config.dt if dt is None else dt
    new = _newton(eq, np.asarray(state.phi.values), _tau(geom.beta, dt), config)
    if new is None:
        raise SolverFailure(f"Newton failed at t={state.t:.6g}; retry with dt={dt / 2:.3g}", state.t, dt / 2)
    return _make_state(eq, state.t + dt, new)


# ---------------------------------------------------------------------------
# runs


DIAGNOSTIC_KEYS = (
    "t",
    "sup_phi_dot",
    "max_principle_bound",
    "v_sup",
    "trace_sup",
    "trace_inf",
    "inv_trace_sup",
    "area_rel_err",
    "R_min",
    "t_R_min",
    "vol_rate_max",
    "newton_ok",
)


def run(geom: ConeGeometry, config: FlowConfig, phi0, check: bool = True) -> Trajectory:
    """Integrate to T from the omega_0 potential ``phi0``.

    With ``check`` the maximum principle (tolerance 1e-6) and the monotonicity
    of sup|v| (1e-8 per step) are asserted at every step.
    """
    grid, beta = geom.grid, geom.beta
    eq = _equation(geom, config.reference)
    m_eps = geom.omega_eps_density().values
    area0 = geom.area0()

    phi = np.asarray(phi0, dtype=float) - eq.offset
    state = _make_state(eq, 0.0, phi)
    w0 = float(np.max(np.abs(state.phi_dot.values)))
    diag = {k: [] for k in DIAGNOSTIC_KEYS}
    stored_t, stored_phi, stored_dot, stored_m = [], [], [], []

    def record(st: FlowState, log_m_prev: np.ndarray | None, dt_prev: float):
        m = st.density.values
        ratio = m / m_eps
        R = ricci_density(grid, m) / m
        w = st.phi_dot.values
        diag["t"].append(st.t)
        diag["sup_phi_dot"].append(float(np.max(np.abs(w))))
        diag["max_principle_bound"].append(math.exp(beta * st.t) * w0)
        diag["v_sup"].append(math.exp(-beta * st.t) * float(np.max(np.abs(w))))
        diag["trace_sup"].append(float(np.max(ratio)))
        diag["trace_inf"].append(float(np.min(ratio)))
        diag["inv_trace_sup"].append(float(np.max(1.0 / ratio)))
        diag["area_rel_err"].append(abs(grid.area(m) / area0 - 1.0))
        diag["R_min"].append(float(np.min(R)))
        diag["t_R_min"].append(st.t * float(np.min(R)))
        if log_m_prev is None:
            diag["vol_rate_max"].append(float("nan"))
        else:
            diag["vol_rate_max"].append(float(np.max(np.log(m) - log_m_prev)) / dt_prev)
        diag["newton_ok"].append(True)

    def store(st: FlowState):
        stored_t.append(st.t)
        stored_phi.append(st.phi.values)
        stored_dot.append(st.phi_dot.values)
        stored_m.append(st.density.values)

    record(state, None, 0.0)
    store(state)
    n = config.n_steps
    dt = config.T / n
    for k in range(1, n + 1):
        log_prev = np.log(state.density.values)
        t_prev = state.t
        phi = _advance(eq, state.phi.values, dt, t_prev, config)
        state = _make_state(eq, k * dt, phi)
        record(state, log_prev, dt)
        if check:
            _check_step(diag, k)
        if k % config.store_every == 0 or k == n:
            store(state)

    return Trajectory(
        times=np.array(stored_t),
        phi=np.array(stored_phi),
        phi_dot=np.array(stored_dot),
        density=np.array(stored_m),
        diagnostics={k: np.array(v) for k, v in diag.items()},
        config=config,
        geometry=geom.describe(),
        grid=grid,
        offset=eq.offset,
    )


def _check_step(diag: dict, k: int):
    t = diag["t"][k]
    sup = diag["sup_phi_dot"][k]
    bound = diag["max_principle_bound"][k]
    if sup > bound + MAX_PRINCIPLE_TOL:
        raise MaximumPrincipleError(f"sup|phi_dot|={sup:.12g} exceeds e^(beta t) sup|phi_dot(0)|={bound:.12g} at t={t:.6g}")
    if diag["v_sup"][k] > diag["v_sup"][k - 1] + MONOTONE_TOL:
        raise MaximumPrincipleError(
            f"sup|v| increased from {diag['v_sup'][k - 1]:.12g} to {diag['v_sup'][k]:.12g} at t={t:.6g}"
        )


def twisted_potential(traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """v = e^{-beta t} d phi/dt on the stored slices and the discrete heat residual.

    The residual between stored slices k-1 and k is
    max |(v_k - v_{k-1}) / dt - Delta_{phi_k} v_k|; entry 0 is nan.
    """
    beta = traj.geometry["beta"]
    v = np.exp(-beta * traj.times)[:, None] * traj.phi_dot
    res = np.full(len(traj), np.nan)
    for k in range(1, len(traj)):
        dt = traj.times[k] - traj.times[k - 1]
        lap = traj.grid.ddbar(v[k]) / traj.density[k]
        res[k] = float(np.max(np.abs((v[k] - v[k - 1]) / dt - lap)))
    return v, res


def restart_datum(state: FlowState, geom: ConeGeometry, reference: str = "omega_0", tol: float = 1e-8) -> RadialField:
    """Log-density F at time t, computed from the equation and from the density.

    From the equation, F = d phi/dt - beta phi - h (omega_0 potential); directly,
    F = log(m_phi/m_0) + (1 - beta) log(|S|^2 + eps).  Both must agree.
    """
    eq = _equation(geom, reference)
    phi0 = state.phi.values + eq.offset
    h = compute_h(geom).values
    from_eq = state.phi_dot.values - geom.beta * phi0 - h
    direct = np.log(state.density.values / geom.m0) + (1.0 - geom.beta) * np.log(geom.S2 + geom.eps)
    gap = float(np.max(np.abs(from_eq - direct)))
    if gap > tol:
        raise FlowError(f"restart datum inconsistent: formula and density differ by {gap:.3e}")
    return RadialField(from_eq, "log-density")


def restart_potential(state: FlowState, geom: ConeGeometry, reference: str = "omega_0") -> np.ndarray:
    """omega_0 potential for a restart: the pipeline potential of F(t), regauged to phi(t)."""
    from .elliptic_init import pipeline

    eq = _equation(geom, reference)
    F = restart_datum(state, geom, reference)
    res = pipeline(geom, F.values, smooth=False)
    phi0 = state.phi.values + eq.offset
    return res.phi_hat.values + np.max(phi0)


def stationary_potential(geom: ConeGeometry, tol: float = 1e-10, max_iter: int = 100) -> RadialField:
    """omega_0 potential solving w(phi) = 0 (a fixed point of the flow) by damped Newton."""
    eq = _equation(geom, "omega_0")
    grid, beta = geom.grid, geom.beta
    phi = np.zeros(grid.size)
    m = _density(eq, phi)
    for _ in range(max_iter):
        r = _w(eq, phi, m)
        if np.max(np.abs(r)) <= tol:
            return RadialField(phi, "potential")
        # J = beta I + diag(1/m) i ddbar; solve_shifted builds diag(d) - diag(c) L
        d = grid.solve_shifted(np.full(grid.size, beta), -1.0 / m, -r)
        lam = 1.0
        base = np.max(np.abs(r))
        while lam > 1e-6:
            trial = phi + lam * d
            m_trial = _density(eq, trial)
            if np.all(m_trial > 0) and np.max(np.abs(_w(eq, trial, m_trial))) < base:
                break
            lam *= 0.5
        else:
            break
        phi, m = trial, m_trial
    raise GeometryError("stationary potential: Newton did not converge")


def with_config(config: FlowConfig, **changes) -> FlowConfig:
    return replace(config, **changes)
