"""The eps -> 0 ladder: one flow per eps, pairwise distances and the verdict.

All rungs share one graded grid (fine enough for the smallest eps), one N and
one initial log-density, so consecutive rungs can be differenced node by node.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .elliptic_init import initial_log_density, pipeline
from .estimates import build_report, parabolic_holder_seminorm, sigma_mask
from .flow import FlowConfig, FlowError, Trajectory, run
from .geometry import ConeGeometry, GeometryError
from .grid import RadialGrid

DEFAULT_LADDER = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5)
CAUCHY_RATIO = 0.9
TRACE_FACTOR = 2.0
C_F_BAND = 0.2


class CascadeFailure(RuntimeError):
    def __init__(self, message: str, record: "CascadeRecord | None" = None):
        super().__init__(message)
        self.record = record


@dataclass(frozen=True)
class CascadePlan:
    eps_ladder: tuple = DEFAULT_LADDER
    delta: float = 0.05
    a0: float = 0.1
    alpha: float = 0.25
    beta: float = 0.5
    grid_n: int = 2048
    pole_spacing: float | None = None
    N: float | None = None
    init: str = "ke"
    flow: FlowConfig = field(default_factory=FlowConfig)

    def __post_init__(self):
        ladder = tuple(float(e) for e in self.eps_ladder)
        object.__setattr__(self, "eps_ladder", ladder)
        if not ladder or any(e <= 0 for e in ladder):
            raise ValueError("eps_ladder must be a nonempty sequence of positive numbers")
        if any(b >= a for a, b in zip(ladder, ladder[1:])):
            raise ValueError("eps_ladder must be strictly decreasing")
        if self.delta <= 0 or self.delta >= 0.5:
            raise ValueError("delta must lie in (0, 1/2)")
        if not 0 < self.a0 < self.flow.T:
            raise ValueError("a0 must lie in (0, T)")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")

    def grid(self) -> RadialGrid:
        spacing = self.pole_spacing if self.pole_spacing is not None else self.eps_ladder[-1] / 40.0
        return RadialGrid.graded(self.grid_n, spacing)

    def geometries(self) -> list[ConeGeometry]:
        grid = self.grid()
        N = self.N
        if N is None:
            N = max(ConeGeometry(self.beta, e, grid).N for e in self.eps_ladder)
        return [ConeGeometry(self.beta, e, grid, N=N) for e in self.eps_ladder]

    def describe(self) -> dict:
        d = asdict(self)
        d["eps_ladder"] = list(self.eps_ladder)
        return d


@dataclass(frozen=True, eq=False)
class Rung:
    eps: float
    geometry: dict
    smoothing: dict
    trajectory: Trajectory | None
    report: dict | None
    error: str | None = None


@dataclass(frozen=True, eq=False)
class CascadeRecord:
    plan: CascadePlan
    rungs: tuple

    def __len__(self):
        return len(self.rungs)

    @property
    def complete(self) -> bool:
        return all(r.error is None for r in self.rungs)


def run_rung(plan: CascadePlan, geom: ConeGeometry) -> Rung:
    F = initial_log_density(plan.init, geom)
    try:
        res = pipeline(geom, F)
        traj = run(geom, plan.flow, res.phi_hat.values)
        report = build_report(traj, geom, alpha=plan.alpha, delta=plan.delta).to_dict()
    except (FlowError, GeometryError, ArithmeticError) as exc:
        return Rung(geom.eps, geom.describe(), {}, None, None, error=f"{type(exc).__name__}: {exc}")
    return Rung(geom.eps, geom.describe(), res.scalars(), traj, report)


def _rung_task(args):
    plan, geom = args
    return run_rung(plan, geom)


def default_jobs() -> int:
    raw = os.environ.get("CONEFLOW_JOBS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_cascade(plan: CascadePlan, jobs: int | None = None) -> CascadeRecord:
    """Run every rung (concurrently with ``jobs`` > 1); raise with the partial record on failure."""
    jobs = default_jobs() if jobs is None else max(1, int(jobs))
    geoms = plan.geometries()
    if jobs == 1 or len(geoms) == 1:
        rungs = [run_rung(plan, g) for g in geoms]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(geoms))) as pool:
            rungs = list(pool.map(_rung_task, [(plan, g) for g in geoms]))
    record = CascadeRecord(plan, tuple(rungs))
    failed = [r for r in rungs if r.error is not None]
    if failed:
        raise CascadeFailure(f"{len(failed)} rung(s) failed; first: eps={failed[0].eps:g}: {failed[0].error}", record)
    return record


# ---------------------------------------------------------------------------
# comparisons


def _pair(rec: CascadeRecord, k: int) -> tuple[Trajectory, Trajectory]:
    if not 0 <= k < len(rec) - 1:
        raise IndexError(f"pair index {k} out of range for a ladder of length {len(rec)}")
    t1, t2 = rec.rungs[k].trajectory, rec.rungs[k + 1].trajectory
    if t1 is None or t2 is None:
        raise ValueError(f"rung {k} or {k + 1} has no trajectory")
    return t1, t2


def holder_distance(u, v, x, times, alpha: float, mask) -> float:
    """sup |u - v| + [u - v]_{alpha, alpha/2} on the masked slab."""
    diff = np.asarray(u) - np.asarray(v)
    return float(np.max(np.abs(diff[:, mask]))) + parabolic_holder_seminorm(diff, x, times, alpha, mask=mask)


def pairwise_distance(rec: CascadeRecord, k: int, delta: float | None = None, alpha: float | None = None) -> float:
    """C^{alpha, alpha/2} distance of rungs k, k+1 on {delta <= sigma <= 1 - delta} x [a0, T].

    Potentials are gauge-fixed by sup phi(t) = 0 before differencing; the
    distance adds the potential and metric-density contributions.  Distances
    in space are omega_D meridian arclengths.
    """
    plan = rec.plan
    delta = plan.delta if delta is None else delta
    alpha = plan.alpha if alpha is None else alpha
    t1, t2 = _pair(rec, k)
    geom = plan.geometries()[k]
    grid = t1.grid
    x = grid.arclength(geom.donaldson_density().values)
    mask = sigma_mask(grid, delta)
    sel = t1.times >= plan.a0 - 1e-12
    if not np.any(sel):
        raise ValueError("no stored slices in [a0, T]")
    times = t1.times[sel]
    p1 = t1.omega0_potential()[sel]
    p2 = t2.omega0_potential()[sel]
    p1 = p1 - p1.max(axis=1, keepdims=True)
    p2 = p2 - p2.max(axis=1, keepdims=True)
    d_phi = holder_distance(p1, p2, x, times, alpha, mask)
    d_m = holder_distance(t1.density[sel], t2.density[sel], x, times, alpha, mask)
    return d_phi + d_m


def gh_distance(m1, m2, grid: RadialGrid, sample_count: int = 64) -> float:
    """Max discrepancy of meridian distances between two metrics over sampled node pairs."""
    idx = np.unique(np.round(np.linspace(0, grid.size - 1, max(2, sample_count))).astype(int))
    x1 = grid.arclength(m1)[idx]
    x2 = grid.arclength(m2)[idx]
    d1 = np.abs(x1[:, None] - x1[None, :])
    d2 = np.abs(x2[:, None] - x2[None, :])
    return float(np.max(np.abs(d1 - d2)))


def gh_proxy(rec: CascadeRecord, k: int, t: float | None = None, sample_count: int = 64) -> float:
    """One-dimensional Gromov-Hausdorff proxy between rungs k, k+1 at the stored time nearest t."""
    t1, t2 = _pair(rec, k)
    t = t1.times[-1] if t is None else t
    if not rec.plan.a0 - 1e-12 <= t <= t1.times[-1] + 1e-12:
        raise ValueError(f"t={t} lies outside [a0, T]")
    j = int(np.argmin(np.abs(t1.times - t)))
    return gh_distance(t1.density[j], t2.density[j], t1.grid, sample_count)


# ---------------------------------------------------------------------------
# verdict


def _ratios(seq) -> list[float]:
    return [float(b / a) if a > 0 else float("inf") for a, b in zip(seq, seq[1:])]


def _cauchy(seq) -> dict:
    ratios = _ratios(seq)
    return {"values": list(map(float, seq)), "ratios": ratios, "passed": all(r <= CAUCHY_RATIO for r in ratios)}


def verdict(rec: CascadeRecord) -> dict:
    """Pass/fail per monitored property, with the measured constants."""
    out: dict = {"eps_ladder": list(rec.plan.eps_ladder)}
    failed = [r for r in rec.rungs if r.error is not None]
    out["runs"] = {"passed": not failed, "errors": {f"{r.eps:g}": r.error for r in failed}}
    ok = [r for r in rec.rungs if r.error is None]
    if not ok:
        out["passed"] = False
        return out

    C_F = np.array([r.smoothing["C_F"] for r in ok])
    a_norm = np.abs([r.smoothing["a_eps_norm"] for r in ok])
    resid = max(
        max(r.smoothing[k] for k in ("normalization_residual", "integral_residual", "area_residual")) for r in ok
    )
    out["smoothing"] = {
        "C_F": C_F.tolist(),
        "C_F_max_deviation": float(np.max(np.abs(C_F / C_F[-1] - 1.0))),
        "a_eps_norm": a_norm.tolist(),
        "max_residual": float(resid),
        "passed": bool(
            np.max(np.abs(C_F / C_F[-1] - 1.0)) <= C_F_BAND and np.all(np.diff(a_norm) < 0) and resid < 1e-8
        ),
    }

    d = [r.trajectory.diagnostics for r in ok]
    mp_margin = min(float(np.min(x["max_principle_bound"] + 1e-6 - x["sup_phi_dot"])) for x in d)
    v_jump = max(float(np.max(np.diff(x["v_sup"]))) if x["v_sup"].size > 1 else 0.0 for x in d)
    out["maximum_principle"] = {"min_margin": mp_margin, "max_v_increase": v_jump, "passed": mp_margin >= 0 and v_jump <= 1e-8}

    tr = np.array([float(np.max(x["trace_sup"])) for x in d])
    inv = np.array([float(np.max(x["inv_trace_sup"])) for x in d])
    out["trace_bounds"] = {
        "trace_sup": tr.tolist(),
        "inv_trace_sup": inv.tolist(),
        "trace_spread": float(tr.max() / tr.min()),
        "inv_trace_spread": float(inv.max() / inv.min()),
        "passed": bool(tr.max() / tr.min() < TRACE_FACTOR and inv.max() / inv.min() < TRACE_FACTOR),
    }
    vol = [r.report["volume_rate"] for r in ok]
    out["volume_rate"] = {"C_over_t": [v.get("C_over_t") for v in vol], "passed": all(v.get("passed", False) for v in vol)}
    out["certificates"] = {"passed": all(r.report["certificate"]["passed"] for r in ok)}

    if len(rec) > 1 and not failed:
        dist = [pairwise_distance(rec, k) for k in range(len(rec) - 1)]
        gh = [gh_proxy(rec, k) for k in range(len(rec) - 1)]
        out["cauchy"] = _cauchy(dist)
        out["gh_proxy"] = _cauchy(gh)
    sections = [v for v in out.values() if isinstance(v, dict) and "passed" in v]
    out["passed"] = all(s["passed"] for s in sections)
    return out
