"""Command-line entry point: ``coneflow polar-check | run-flow | cascade``.

Exit codes: 0 success, 1 invariant or certificate failure, 2 argument or
config error, 3 solver failure.  Structured error lines go to stderr.
"""
from __future__ import annotations

import argparse
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .cascade import DEFAULT_LADDER, CascadeFailure, CascadePlan, default_jobs, run_cascade, verdict
from .elliptic_init import initial_log_density, pipeline
from .estimates import build_report
from .flow import FlowConfig, FlowError, KahlerConeError, MaximumPrincipleError, SolverFailure, run, stationary_potential
from .geometry import ConeGeometry, GeometryError
from .grid import RadialGrid
from .polar import ChartError, comparison_check, integrate_polar, quasi_isometry_certificate
from .records import ConfigError, format_config, read_config, run_id, write_csv, write_json

EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3

RUN_KEYS = {
    "beta": 0.5,
    "eps": 1e-3,
    "N": None,
    "delta": None,
    "rho": None,
    "grid.n": 2048,
    "grid.pole_spacing": None,
    "flow.dt": 1e-3,
    "flow.T": 1.0,
    "flow.scheme": "implicit",
    "flow.reference": "omega_0",
    "flow.store_every": 10,
    "flow.newton_tol": 1e-12,
    "flow.newton_max_iter": 30,
    "flow.dt_floor": 1e-6,
    "init.F": "ke",
    "output.dir": "runs",
}
CASCADE_KEYS = {
    "cascade.eps_ladder": list(DEFAULT_LADDER),
    "cascade.delta": 0.05,
    "cascade.a0": 0.1,
    "cascade.alpha": 0.25,
}
INIT_CHOICES = ("ke", "rough", "const", "stationary")


def _err(kind: str, message: str):
    print(f"error: kind={kind} message={message}", file=sys.stderr)


def _resolve(raw: dict, allowed: dict) -> dict:
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    cfg = dict(allowed)
    cfg.update(raw)
    return cfg


def _flow_config(cfg: dict) -> FlowConfig:
    try:
        return FlowConfig(
            dt=float(cfg["flow.dt"]),
            T=float(cfg["flow.T"]),
            scheme=str(cfg["flow.scheme"]),
            newton_tol=float(cfg["flow.newton_tol"]),
            newton_max_iter=int(cfg["flow.newton_max_iter"]),
            reference=str(cfg["flow.reference"]),
            store_every=int(cfg["flow.store_every"]),
            dt_floor=min(float(cfg["flow.dt_floor"]), float(cfg["flow.dt"])),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _geometry(cfg: dict) -> ConeGeometry:
    eps = float(cfg["eps"])
    spacing = cfg["grid.pole_spacing"]
    if spacing is None:
        spacing = max(eps, 1e-12) / 40.0
    grid = RadialGrid.graded(int(cfg["grid.n"]), float(spacing))
    opt = lambda k: None if cfg[k] is None else float(cfg[k])  # noqa: E731
    return ConeGeometry(float(cfg["beta"]), eps, grid, N=opt("N"), delta=opt("delta"), rho_exp=opt("rho"))


def _content_id(cfg: dict) -> str:
    # the output location is not part of the run's content
    return run_id({k: v for k, v in cfg.items() if k != "output.dir"})


def _manifest(config: dict, outputs: list[str], started: float, kind: str) -> dict:
    return {
        "kind": kind,
        "version": __version__,
        "run_id": _content_id(config),
        "config": config,
        "started_utc": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "wall_time_s": time.time() - started,
        "outputs": outputs,
    }


def _trajectory_columns(traj) -> dict:
    d = traj.diagnostics
    return {k: d[k] for k in ("t", "sup_phi_dot", "max_principle_bound", "v_sup", "trace_sup", "trace_inf",
                              "inv_trace_sup", "area_rel_err", "R_min", "t_R_min", "vol_rate_max")}


def _final_columns(traj) -> dict:
    st = traj.final
    return {
        "sigma": traj.grid.nodes,
        "phi": traj.omega0_potential()[-1],
        "phi_dot": st.phi_dot.values,
        "density": st.density.values,
    }


def write_run(folder: Path, smoothing: dict, traj, report: dict) -> list[str]:
    folder.mkdir(parents=True, exist_ok=True)
    paths = [
        write_csv(folder / "trajectory.csv", _trajectory_columns(traj)),
        write_csv(folder / "final_fields.csv", _final_columns(traj)),
        write_json(folder / "smoothing.json", smoothing),
        write_json(folder / "report.json", report),
    ]
    return [p.name for p in paths]


# ---------------------------------------------------------------------------
# subcommands


def cmd_polar_check(args) -> int:
    out = Path(args.out)
    certs = []
    ok = True
    try:
        for eps in args.eps:
            chart = integrate_polar(args.beta, eps, args.rho_max, args.step)
            chart.to_csv(out / f"polar_beta{args.beta:g}_eps{eps:g}.csv")
            cert = {"comparison": comparison_check(chart), "pinching": quasi_isometry_certificate(chart)}
            cert["passed"] = cert["comparison"]["passed"] and cert["pinching"]["passed"]
            ok &= cert["passed"]
            certs.append(cert)
            print(f"beta={args.beta:g} eps={eps:g} a in [{cert['pinching']['lower_pinching']:.12g}, "
                  f"{cert['pinching']['upper_pinching']:.12g}] {'PASS' if cert['passed'] else 'FAIL'}")
    except ChartError as exc:
        _err("argument", str(exc))
        return EXIT_CONFIG
    write_json(out / "certificate.json", {"beta": args.beta, "rho_max": args.rho_max, "step": args.step,
                                          "charts": certs, "passed": ok})
    return EXIT_OK if ok else EXIT_INVARIANT


def cmd_run_flow(args) -> int:
    started = time.time()
    try:
        cfg = _resolve(read_config(args.config) if args.config else {}, RUN_KEYS)
        if cfg["init.F"] not in INIT_CHOICES:
            raise ConfigError(f"init.F must be one of {INIT_CHOICES}")
        fcfg = _flow_config(cfg)
        geom = _geometry(cfg)
    except (ConfigError, GeometryError, ValueError) as exc:
        _err("config", str(exc))
        return EXIT_CONFIG

    rid = _content_id(cfg)
    folder = Path(cfg["output.dir"]) / f"run-{rid}"
    try:
        if cfg["init.F"] == "stationary":
            phi0 = stationary_potential(geom).values
            smoothing = {"init": "stationary"}
        else:
            res = pipeline(geom, initial_log_density(cfg["init.F"], geom))
            phi0, smoothing = res.phi_hat.values, res.scalars()
        traj = run(geom, fcfg, phi0)
        report = build_report(traj, geom).to_dict()
    except SolverFailure as exc:
        _err("solver", f"t={exc.t:.17g} {exc}")
        return EXIT_SOLVER
    except (MaximumPrincipleError, KahlerConeError) as exc:
        _err("invariant", str(exc))
        return EXIT_INVARIANT
    except (FlowError, GeometryError, ArithmeticError) as exc:
        _err("invariant", str(exc))
        return EXIT_INVARIANT

    outputs = write_run(folder, smoothing, traj, report)
    (folder / "config.txt").write_text(format_config(cfg), encoding="utf-8")
    write_json(folder / "manifest.json", _manifest(cfg, outputs + ["config.txt"], started, "run-flow"))
    ok = report["certificate"]["passed"] and report["volume_rate"].get("passed", True)
    print(f"run {rid}: T={fcfg.T:g} steps={fcfg.n_steps} sup|phi_dot|={float(np.max(traj.diagnostics['sup_phi_dot'])):.6g} "
          f"-> {folder}")
    return EXIT_OK if ok else EXIT_INVARIANT


def _plan(cfg: dict) -> CascadePlan:
    ladder = cfg["cascade.eps_ladder"]
    ladder = [ladder] if not isinstance(ladder, list) else ladder
    spacing = cfg["grid.pole_spacing"]
    return CascadePlan(
        eps_ladder=tuple(float(e) for e in ladder),
        delta=float(cfg["cascade.delta"]),
        a0=float(cfg["cascade.a0"]),
        alpha=float(cfg["cascade.alpha"]),
        beta=float(cfg["beta"]),
        grid_n=int(cfg["grid.n"]),
        pole_spacing=None if spacing is None else float(spacing),
        N=None if cfg["N"] is None else float(cfg["N"]),
        init=str(cfg["init.F"]),
        flow=_flow_config(cfg),
    )


def write_cascade(folder: Path, rec, summary: dict) -> list[str]:
    folder.mkdir(parents=True, exist_ok=True)
    outputs = [write_json(folder / "plan.json", rec.plan.describe()).name]
    for k, rung in enumerate(rec.rungs):
        sub = folder / f"rung-{k}"
        if rung.trajectory is not None:
            write_run(sub, rung.smoothing, rung.trajectory, rung.report)
        write_json(sub / "rung.json", {"eps": rung.eps, "geometry": rung.geometry, "error": rung.error})
        outputs.append(sub.name)
    outputs.append(write_json(folder / "verdict.json", summary).name)
    return outputs


def cmd_cascade(args) -> int:
    started = time.time()
    allowed = {k: v for k, v in RUN_KEYS.items() if k not in ("eps", "delta", "rho")}
    allowed.update(CASCADE_KEYS)
    try:
        cfg = _resolve(read_config(args.config) if args.config else {}, allowed)
        if cfg["init.F"] not in INIT_CHOICES[:3]:
            raise ConfigError(f"init.F must be one of {INIT_CHOICES[:3]} for a cascade")
        plan = _plan(cfg)
    except (ConfigError, GeometryError, ValueError) as exc:
        _err("config", str(exc))
        return EXIT_CONFIG
    jobs = args.jobs if args.jobs is not None else default_jobs()
    rid = _content_id(cfg)
    folder = Path(cfg["output.dir"]) / f"cascade-{rid}"
    try:
        rec = run_cascade(plan, jobs=jobs)
    except CascadeFailure as exc:
        summary = verdict(exc.record) if exc.record is not None else {"passed": False}
        write_cascade(folder, exc.record, summary)
        kinds = [r.error.split(":", 1)[0] for r in exc.record.rungs if r.error]
        _err("solver" if "SolverFailure" in kinds else "invariant", str(exc))
        return EXIT_SOLVER if "SolverFailure" in kinds else EXIT_INVARIANT
    except GeometryError as exc:
        _err("config", str(exc))
        return EXIT_CONFIG
    summary = verdict(rec)
    outputs = write_cascade(folder, rec, summary)
    write_json(folder / "manifest.json", _manifest(cfg, outputs, started, "cascade"))
    for key, val in summary.items():
        if isinstance(val, dict) and "passed" in val:
            print(f"{key:20s} {'PASS' if val['passed'] else 'FAIL'}")
    print(f"cascade {rid}: {'PASS' if summary['passed'] else 'FAIL'} -> {folder}")
    return EXIT_OK if summary["passed"] else EXIT_INVARIANT


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coneflow", description="Conical Kahler-Ricci flow on the two-pointed sphere")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    pc = sub.add_parser("polar-check", help="certify the polar chart of the regularised cone")
    pc.add_argument("--beta", type=float, required=True)
    pc.add_argument("--eps", type=float, action="append", required=True, help="repeatable")
    pc.add_argument("--rho-max", type=float, default=1.0)
    pc.add_argument("--step", type=float, default=1e-3)
    pc.add_argument("--out", default="polar")
    pc.set_defaults(func=cmd_polar_check)

    rf = sub.add_parser("run-flow", help="smooth the initial data and run one flow")
    rf.add_argument("--config", help="key = value config file")
    rf.set_defaults(func=cmd_run_flow)

    cc = sub.add_parser("cascade", help="run the eps-ladder and emit the verdict")
    cc.add_argument("--config", help="key = value config file")
    cc.add_argument("--jobs", type=int, default=None, help="parallel rungs (default: $CONEFLOW_JOBS or 1)")
    cc.set_defaults(func=cmd_cascade)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
