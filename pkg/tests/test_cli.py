from __future__ import annotations

import csv
import json
from importlib import resources

import jsonschema
import pytest

from seglab import cli
from seglab.cli import RunManifest, main, run_experiment, sweep
from seglab.errors import ConvergenceError


@pytest.fixture(scope="module")
def schema():
    return json.loads(resources.files("seglab").joinpath("data/report.schema.json").read_text())


def _files(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_parser_values():
    a = cli.build_parser().parse_args(["--bc", "3", "--systems", "A, predicted", "--delta", "auto", "--sweep", "n=51,101"])
    assert a.systems == ("a", "predicted")
    assert a.delta is None
    assert a.sweep == ("n", ["51", "101"])
    with pytest.raises(SystemExit):
        cli.build_parser().parse_args(["--systems", "c"])
    with pytest.raises(SystemExit):
        cli.build_parser().parse_args(["--delta", "-1"])


def test_manifest_defaults():
    m = RunManifest("line")
    assert m.grid_n == 1001 and m.threshold == pytest.approx(1e-5)
    assert RunManifest("4").grid_n == 201 and RunManifest("4").run_name() == "bc4_n201"
    with pytest.raises(ValueError):
        RunManifest("1", systems=("x",))
    with pytest.raises(ValueError):
        RunManifest("1", epsilon=0)


def test_list(capsys):
    assert main(["--bc", "list"]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 9


@pytest.mark.parametrize("bc", ["0", "nope.json", "10"])
def test_unknown_bc(bc, tmp_path):
    assert main(["--bc", bc, "--out", str(tmp_path)]) == cli.EXIT_IO


def test_invalid_spec_exit_code(tmp_path, schema):
    doc = {"label": "ones", "components": [[{"edge": "all", "expr": 1}]] * 3}
    path = tmp_path / "ones.json"
    path.write_text(json.dumps(doc))
    assert main(["--bc", str(path), "--n", "11", "--out", str(tmp_path / "out")]) == cli.EXIT_INVARIANT
    rep = json.loads((tmp_path / "out" / "ones_n11" / "report.json").read_text())
    jsonschema.validate(rep, schema)
    assert rep["status"]["hard_failures"] == ["boundary.valid"]


def test_convergence_failure_exit_code(monkeypatch):
    def boom(spec, grid, cfg):
        raise ConvergenceError("no", residual=1.0, stage=1e-4)

    monkeypatch.setattr(cli, "solve_system_a", boom)
    r = run_experiment(RunManifest("line", n=51, systems=("a", "predicted")))
    assert r.exit_code == cli.EXIT_CONVERGENCE
    assert r.data["systems"]["A"]["failed_stage"] == 1e-4
    assert "A.converged" in r.data["status"]["hard_failures"]


def test_line_run_outputs(tmp_path, schema):
    assert main(["--bc", "line", "--out", str(tmp_path)]) == 0
    d = tmp_path / "line_n1001"
    rep = json.loads((d / "report.json").read_text())
    jsonschema.validate(rep, schema)
    for name in ("timings.json", "h1.csv", "h12.csv", "sysA_u1.csv", "sysB_u3.csv", "sysLimitA.json", "contours.csv"):
        assert (d / name).exists(), name
    assert "timings" not in rep
    assert rep["oracle"]["A_sup_error"] <= 5e-3


def test_predicted_only(tmp_path, schema):
    r = run_experiment(RunManifest("4", n=41, systems=("predicted",), out=str(tmp_path)))
    assert r.exit_code == 0
    assert r.data["systems"] == {}
    assert set(r.data["interfaces"]) == {"Predicted"}
    d = tmp_path / "bc4_n41"
    assert (d / "contours.csv").exists() and (d / "labels.pgm").exists()
    assert not list(d.glob("sysA*"))
    jsonschema.validate(json.loads((d / "report.json").read_text()), schema)


@pytest.mark.parametrize("bc, n", [("line", 201), ("4", 41)])
def test_deterministic_outputs(tmp_path, bc, n):
    for k in (1, 2):
        assert main(["--bc", bc, "--n", str(n), "--out", str(tmp_path / f"r{k}")]) in (0, 2)
    f1, f2 = _files(tmp_path / "r1"), _files(tmp_path / "r2")
    assert f1.keys() == f2.keys()
    for name in f1:
        if not name.endswith("timings.json"):
            assert f1[name] == f2[name], name


def test_single_value_sweep_matches_run():
    m = RunManifest("5", n=31, epsilon=1e-6)
    (r,) = sweep(m, "epsilon", [1e-6])
    assert r.data == run_experiment(m).data


def test_sweep_validation():
    with pytest.raises(ValueError):
        sweep(RunManifest("5", n=21), "epsilon", [1e-4, 1e-8, 1e-6])
    with pytest.raises(ValueError):
        sweep(RunManifest("5", n=21), "ratio", [0.1])


def test_epsilon_sweep_penalty_trend(tmp_path):
    path = tmp_path / "eps.csv"
    sweep(RunManifest("5", n=41), "epsilon", [1e-4, 1e-6, 1e-8, 1e-10], path)
    rows = list(csv.DictReader(path.open()))
    assert len(rows) == 4
    for tag in ("A", "B"):
        assert "up" not in [r[f"penalty_trend_{tag}"] for r in rows]
        pens = [float(r[f"penalty_{tag}"]) for r in rows]
        assert all(b <= a for a, b in zip(pens, pens[1:]))


def test_mesh_sweep_hausdorff(tmp_path):
    reps = sweep(RunManifest("3", systems=("a", "predicted")), "n", [51, 101, 201], tmp_path / "n.csv")
    haus = [max(c["hausdorff"] for c in r.data["comparisons"] if c["pair"] == "SysA-Predicted") for r in reps]
    hs = [r.data["grid"]["spacing"][0] for r in reps]
    for k in range(1, len(haus)):
        assert haus[k] <= haus[k - 1] + hs[k]


def test_cli_sweep(tmp_path, capsys):
    code = main(["--bc", "5", "--n", "21", "--sweep", "epsilon=1e-4,1e-6", "--out", str(tmp_path)])
    assert code in (0, 2)
    assert (tmp_path / "sweep_epsilon_bc5_n21.csv").exists()
    assert len(capsys.readouterr().out.splitlines()) == 2
