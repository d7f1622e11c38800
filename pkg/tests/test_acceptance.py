"""Acceptance suite: one test per criterion, each printing a one-line verdict."""
import filecmp
import math
import time

import numpy as np
import pytest

import conftest
from coneflow.cascade import CascadePlan
from coneflow.cli import main
from coneflow.elliptic_init import initial_log_density, pipeline
from coneflow.estimates import eigenvalue_inequality, uniqueness_compare, volume_rate_check
from coneflow.flow import FlowConfig, run
from coneflow.geometry import ConeGeometry, regularized_cone_density
from coneflow.grid import RadialGrid
from coneflow.polar import BOUND_TOL, integrate_polar
from coneflow.records import read_json
from test_geometry import five_point_density

BETAS = (0.3, 0.5, 0.7, 0.9)
EPS_DECADES = tuple(10.0**-k for k in range(9))


def report(n: int, ok: bool, detail: str):
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="session")
def cascades(tmp_path_factory):
    """The default cascade run twice through the CLI (serial, then two workers)."""
    root = tmp_path_factory.mktemp("cascade")
    folders = []
    for tag, jobs in (("serial", "1"), ("parallel", "2")):
        cfg = root / f"{tag}.txt"
        cfg.write_text(f"output.dir = {root / tag}\n")
        code = main(["cascade", "--config", str(cfg), "--jobs", jobs])
        (folder,) = sorted((root / tag).glob("cascade-*"))
        folders.append((code, folder))
    return folders


@pytest.fixture(scope="session")
def verdict(cascades):
    return read_json(cascades[0][1] / "verdict.json")


def test_criterion_01_polar_certification():
    t0 = time.perf_counter()
    lo_margin, hi_margin = math.inf, math.inf
    for beta in BETAS:
        for eps in EPS_DECADES:
            a = integrate_polar(beta, eps, 1.0).a_vals
            lo_margin = min(lo_margin, float(np.min(a)) - (beta**2 - BOUND_TOL))
            hi_margin = min(hi_margin, 1.0 + BOUND_TOL - float(np.max(a)))
    branch_err = max(
        max(float(np.max(np.abs(integrate_polar(1.0, eps, 1.0).a_vals - 1.0))) for eps in (1.0, 1e-4, 0.0)),
        max(float(np.max(np.abs(integrate_polar(beta, 0.0, 1.0).a_vals - beta**2))) for beta in BETAS),
    )
    elapsed = time.perf_counter() - t0
    ok = lo_margin > 0 and hi_margin >= 0 and branch_err <= 1e-8 and elapsed < 1.0
    report(1, ok, f"min lower margin {lo_margin:.3e}, upper margin {hi_margin:.3e}, "
                  f"branch error {branch_err:.1e}, {elapsed:.3f} s")


def test_criterion_02_density_identity():
    t0 = time.perf_counter()
    worst = 0.0
    for beta in BETAS:
        for eps in EPS_DECADES:
            for y in (1e-8, 1e-4, 0.01, 0.3, 1.0):
                exact = regularized_cone_density(beta, eps, y)
                worst = max(worst, abs(five_point_density(beta, eps, y) / exact - 1.0))
    elapsed = time.perf_counter() - t0
    report(2, worst < 1e-6 and elapsed < 1.0, f"worst relative error {worst:.2e}, {elapsed:.3f} s")


def test_criterion_03_smoothing_pipeline():
    plan = CascadePlan()
    t0 = time.perf_counter()
    results = [pipeline(g, initial_log_density(plan.init, g)) for g in plan.geometries()]
    elapsed = time.perf_counter() - t0
    resid = max(max(r.normalization_residual, r.integral_residual) for r in results)
    area = max(r.area_residual for r in results)
    a_norm = np.abs([r.a_eps_norm for r in results])
    C_F = np.array([r.C_F for r in results])
    spread = float(np.max(np.abs(C_F / C_F[-1] - 1.0)))
    ok = resid < 1e-8 and area < 1e-8 and bool(np.all(np.diff(a_norm) < 0)) and spread <= 0.2 and elapsed < 10
    report(3, ok, f"residual {resid:.1e}, area {area:.1e}, |a_eps| {np.array2string(a_norm, precision=3)}, "
                  f"C_F deviation {spread:.3f}, {elapsed:.2f} s")


def test_criterion_04_maximum_principles():
    geom = CascadePlan().geometries()[2]
    phi0 = pipeline(geom, initial_log_density("ke", geom)).phi_hat.values
    t0 = time.perf_counter()
    traj = run(geom, FlowConfig(dt=1e-3, T=1.0), phi0, check=False)
    elapsed = time.perf_counter() - t0
    d = traj.diagnostics
    mp = float(np.max(d["sup_phi_dot"] - d["max_principle_bound"]))
    rise = float(np.max(np.diff(d["v_sup"])))
    ok = mp <= 1e-6 and rise <= 1e-8 and elapsed < 60 and d["t"].size == 1001
    report(4, ok, f"max excess over e^(bt) bound {mp:.2e}, max rise of sup|v| {rise:.2e}, {elapsed:.1f} s")


def test_criterion_05_trace_bounds(verdict):
    tb = verdict["trace_bounds"]
    ok = tb["trace_spread"] < 2 and tb["inv_trace_spread"] < 2
    report(5, ok, f"trace spread {tb['trace_spread']:.3f}, inverse trace spread {tb['inv_trace_spread']:.3f}")


def test_criterion_06_cauchy(verdict):
    c, gh = verdict["cauchy"], verdict["gh_proxy"]
    ok = all(r <= 0.9 for r in c["ratios"]) and all(r <= 0.9 for r in gh["ratios"])
    fmt = lambda xs: ", ".join(f"{x:.3f}" for x in xs)  # noqa: E731
    report(6, ok, f"distance ratios [{fmt(c['ratios'])}], GH ratios [{fmt(gh['ratios'])}]")


def test_criterion_07_curvature():
    out = []
    for n, dt in ((1024, 2e-3), (2048, 1e-3)):
        geom = ConeGeometry(0.5, 1e-3, RadialGrid.graded(n, 1e-3 / 40))
        phi0 = pipeline(geom, initial_log_density("rough", geom)).phi_hat.values
        traj = run(geom, FlowConfig(dt=dt, T=1.0), phi0)
        out.append((float(np.min(traj.diagnostics["t_R_min"][1:])), volume_rate_check(traj, 0.5)))
    (c1, v1), (c2, v2) = out
    change = abs(c2 / c1 - 1.0)
    ok = math.isfinite(c1) and math.isfinite(c2) and change <= 0.2 and v1["passed"] and v2["passed"]
    report(7, ok, f"min tR {c1:.4f} -> {c2:.4f} (change {change:.3f}); "
                  f"volume rate C/t constants {v1['C_over_t']:.3f}, {v2['C_over_t']:.3f} <= 1")


def test_criterion_08_uniqueness(verdict):
    plan = CascadePlan()
    geoms = {g.eps: g for g in plan.geometries()}
    g1, g2 = geoms[1e-4], geoms[1e-3]
    phi0 = pipeline(g1, initial_log_density(plan.init, g1)).phi_hat.values
    cfg = FlowConfig(dt=1e-3, T=1.0, store_every=1)
    res = uniqueness_compare(run(g1, cfg, phi0), run(g2, cfg, phi0), a=0.1, p=plan.alpha * plan.beta / 4)
    # discretisation scale: the measured distance between the 1e-3 and 1e-4 rungs
    scale = verdict["cauchy"]["values"][list(plan.eps_ladder).index(1e-3)]
    ok = res["envelope_passed"] and abs(res["extrapolated_sup"]) <= scale
    report(8, ok, f"envelope held for a in {[r['a'] for r in res['ledger']]}, "
                  f"extrapolated sup {res['extrapolated_sup']:.2e} vs scale {scale:.3f}")


def test_criterion_09_eigenvalue_inequality():
    rng = np.random.default_rng(20240601)
    t0 = time.perf_counter()
    holds = True
    for n in range(2, 7):
        lam = np.exp(rng.uniform(-5, 5, size=(100_000, n)))
        holds &= bool(np.all(eigenvalue_inequality(lam)))
    lam2 = np.exp(rng.uniform(-5, 5, size=(100_000, 2)))
    _, lhs, rhs = eigenvalue_inequality(lam2, return_sides=True)
    gap = float(np.max(np.abs(lhs - rhs) / np.spacing(np.maximum(lhs, rhs))))
    elapsed = time.perf_counter() - t0
    ok = holds and gap <= 8 and elapsed < 1.0
    report(9, ok, f"all tuples hold for n = 2..6, n = 2 equality within {gap:.0f} ulp, {elapsed:.3f} s")


def test_criterion_10_determinism(cascades):
    (code_a, a), (code_b, b) = cascades
    files = sorted(str(p.relative_to(a)) for p in a.rglob("*") if p.is_file() and p.name != "manifest.json")
    _, mismatch, errors = filecmp.cmpfiles(a, b, files, shallow=False)
    ok = code_a == code_b == 0 and a.name == b.name and not mismatch and not errors
    report(10, ok, f"{len(files)} files byte-identical across serial and parallel runs (exit {code_a}, {code_b})")
