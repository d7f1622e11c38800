import filecmp
from pathlib import Path

import numpy as np
import pytest

from coneflow.cli import main
from coneflow.records import format_config, parse_config_text, read_csv, read_config, read_json, run_id, write_csv, write_json
from coneflow.records import ConfigError

SMALL_RUN = """
beta = 0.5
eps = 0.01
grid.n = 256
flow.dt = 0.01
flow.T = 0.1
flow.store_every = 2
"""

SMALL_CASCADE = """
beta = 0.5
grid.n = 128
flow.dt = 0.02
flow.T = 0.1
flow.store_every = 1
cascade.eps_ladder = 0.1, 0.01
cascade.a0 = 0.04
"""


def _write(tmp_path, text, out="out"):
    path = tmp_path / "cfg.txt"
    path.write_text(text + f"output.dir = {tmp_path / out}\n")
    return str(path)


def _only(folder: Path, prefix: str) -> Path:
    found = sorted(folder.glob(prefix + "*"))
    assert len(found) == 1
    return found[0]


def test_csv_round_trip(tmp_path):
    cols = {"a": np.array([0.1, 1 / 3, -2e-300]), "b": np.array([1.0, np.pi, 7.0])}
    back = read_csv(write_csv(tmp_path / "x.csv", cols))
    for k in cols:
        assert np.array_equal(back[k], cols[k])


def test_json_and_config_round_trip(tmp_path):
    obj = {"x": np.float64(0.1), "y": [np.int64(3), 2.5], "z": {"ok": np.bool_(True)}}
    assert read_json(write_json(tmp_path / "x.json", obj)) == {"x": 0.1, "y": [3, 2.5], "z": {"ok": True}}
    cfg = {"beta": 0.5, "N": None, "cascade.eps_ladder": [0.1, 0.01], "flow.scheme": "implicit", "flag": True}
    assert parse_config_text(format_config(cfg)) == cfg
    (tmp_path / "c.txt").write_text(format_config(cfg))
    assert read_config(tmp_path / "c.txt") == cfg
    assert run_id(cfg) == run_id(dict(reversed(list(cfg.items()))))
    with pytest.raises(ConfigError):
        parse_config_text("a = 1\na = 2\n")


def test_polar_check(tmp_path, capsys):
    out = tmp_path / "polar"
    assert main(["polar-check", "--beta", "0.5", "--eps", "0.1", "--eps", "0", "--out", str(out)]) == 0
    assert (out / "polar_beta0.5_eps0.1.csv").exists() and (out / "polar_beta0.5_eps0.csv").exists()
    assert read_json(out / "certificate.json")["passed"]
    assert "PASS" in capsys.readouterr().out


@pytest.mark.parametrize(
    "argv",
    [
        ["polar-check", "--beta", "0.5", "--eps", "-1"],
        ["polar-check", "--beta", "1.5", "--eps", "0.1"],
        ["polar-check", "--eps", "0.1"],
        ["nonsense"],
        [],
    ],
)
def test_argument_errors(tmp_path, argv, capsys):
    if argv and argv[0] == "polar-check" and "--beta" in argv:
        argv = argv + ["--out", str(tmp_path)]
    assert main(argv) == 2


def test_config_errors(tmp_path, capsys):
    assert main(["run-flow", "--config", _write(tmp_path, "colour = red\n")]) == 2
    assert "kind=config" in capsys.readouterr().err
    assert main(["run-flow", "--config", _write(tmp_path, "beta = 2\n")]) == 2
    assert main(["run-flow", "--config", _write(tmp_path, "init.F = spiky\n")]) == 2
    assert main(["run-flow", "--config", str(tmp_path / "missing.txt")]) == 2
    assert main(["cascade", "--config", _write(tmp_path, "cascade.eps_ladder = 0.01, 0.1\n")]) == 2


def test_run_flow_outputs(tmp_path):
    assert main(["run-flow", "--config", _write(tmp_path, SMALL_RUN)]) == 0
    folder = _only(tmp_path / "out", "run-")
    names = {p.name for p in folder.iterdir()}
    assert {"trajectory.csv", "final_fields.csv", "smoothing.json", "report.json", "config.txt", "manifest.json"} <= names
    traj = read_csv(folder / "trajectory.csv")
    assert traj["t"][-1] == pytest.approx(0.1)
    assert np.all(traj["sup_phi_dot"] <= traj["max_principle_bound"] + 1e-12)
    manifest = read_json(folder / "manifest.json")
    assert folder.name == f"run-{manifest['run_id']}"
    assert read_config(folder / "config.txt")["grid.n"] == 256


def test_stationary_run_is_constant(tmp_path):
    assert main(["run-flow", "--config", _write(tmp_path, SMALL_RUN + "init.F = stationary\n")]) == 0
    traj = read_csv(_only(tmp_path / "out", "run-") / "trajectory.csv")
    assert np.max(traj["sup_phi_dot"]) < 1e-9


def test_oversized_step_is_a_solver_failure(tmp_path, capsys):
    text = SMALL_RUN + "flow.dt = 50\nflow.T = 100\nflow.dt_floor = 10\nflow.newton_max_iter = 2\n"
    text = text.replace("flow.dt = 0.01\nflow.T = 0.1\n", "")
    assert main(["run-flow", "--config", _write(tmp_path, text)]) == 3
    assert "kind=solver" in capsys.readouterr().err


def test_cascade_is_reproducible(tmp_path):
    assert main(["cascade", "--config", _write(tmp_path, SMALL_CASCADE, "a"), "--jobs", "1"]) in (0, 1)
    assert main(["cascade", "--config", _write(tmp_path, SMALL_CASCADE, "b"), "--jobs", "2"]) in (0, 1)
    fa, fb = _only(tmp_path / "a", "cascade-"), _only(tmp_path / "b", "cascade-")
    assert fa.name == fb.name
    files = sorted(p.relative_to(fa) for p in fa.rglob("*") if p.is_file() and p.name != "manifest.json")
    assert files
    match, mismatch, errors = filecmp.cmpfiles(fa, fb, [str(f) for f in files], shallow=False)
    assert not mismatch and not errors
    verdict = read_json(fa / "verdict.json")
    assert {"runs", "maximum_principle", "cauchy", "passed"} <= set(verdict)
