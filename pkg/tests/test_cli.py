import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from relfermi import cli
from relfermi.state import load_orbitals

SMALL = ["--n", "16", "--L", "16"]


def run(tmp_path, *args):
    return cli.main(list(args) + ["--out", str(tmp_path)])


def result(path):
    return json.loads((path / "result.json").read_text())


def test_bad_N_exits_1(tmp_path, capsys):
    assert run(tmp_path, "constant", "--N", "0") == 1
    assert "N must be 1..3" in capsys.readouterr().err
    assert not any(tmp_path.iterdir())


def test_unknown_flag_and_command(tmp_path):
    assert run(tmp_path, "constant", "--bogus", "1") == 1
    assert run(tmp_path, "launch") == 1
    assert run(tmp_path, "constant", "--n", "sixteen") == 1


def test_config_file_line_numbers(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nn = 16\n\nfoo = 3\n")
    assert cli.main(["constant", "--config", str(cfg)]) == 1
    assert "run.cfg:4: unknown key 'foo'" in capsys.readouterr().err
    cfg.write_text("n 16\n")
    assert cli.main(["constant", "--config", str(cfg)]) == 1
    cfg.write_text("refine = maybe\n")
    assert cli.main(["constant", "--config", str(cfg)]) == 1


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("n = 8\nL = 16\nN = 1\nseeds = 0\n")
    assert cli.main(["constant", "--config", str(cfg), "--n", "16", "--out", str(tmp_path / "o")]) == 0
    text = (tmp_path / "o" / "constant-0001" / "config.txt").read_text()
    assert "n = 16\n" in text and "N = 1\n" in text
    # the resolved config replays as a config file
    assert cli.read_config(tmp_path / "o" / "constant-0001" / "config.txt")["n"] == 16


def test_constant_writes_run_directory(tmp_path):
    assert run(tmp_path, "constant", "--N", "1", *SMALL) == 0
    assert run(tmp_path, "constant", "--N", "1", *SMALL) == 0
    runs = sorted(p.name for p in tmp_path.iterdir())
    assert runs == ["constant-0001", "constant-0002"]
    doc = result(tmp_path / "constant-0001")
    assert set(doc) >= {"schema_version", "kind", "inputs", "outputs", "environment", "timing"}
    assert doc["kind"] == "constant" and doc["exit_code"] == 0
    assert doc["inputs"]["a"] is None
    opt = load_orbitals(tmp_path / "constant-0001" / "optimizer.fvf")
    assert opt.grid.n == 16


def test_env_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env"))
    assert cli.main(["constant", "--N", "1", *SMALL]) == 0
    assert (tmp_path / "env" / "constant-0001" / "result.json").exists()


def test_result_matches_schema(tmp_path):
    jsonschema = pytest.importorskip("jsonschema")
    from importlib.resources import files

    schema = json.loads(files("relfermi").joinpath("schemas/result.schema.json").read_text())
    assert run(tmp_path, "constant", "--N", "1", *SMALL) == 0
    jsonschema.validate(result(tmp_path / "constant-0001"), schema)


def test_sweep_and_fit(tmp_path):
    code = run(tmp_path, "sweep", *SMALL, "--D2", "2.95", "--ratios", "0.9,0.94,0.97,0.985", "--box-tol", "1e-3")
    assert code == 0
    path = tmp_path / "sweep-0001" / "sweep.csv"
    rows = list(csv.DictReader(path.open()))
    assert list(rows[0]) == list(cli.SWEEP_COLUMNS) and len(rows) == 4
    # 17 significant digits: values survive a text round trip
    doc = result(tmp_path / "sweep-0001")
    assert float(rows[2]["E"]) == doc["outputs"]["records"][2]["E"]
    assert run(tmp_path, "fit", "--csv", str(path), "--target", "energy_law") == 0
    fit = result(tmp_path / "fit-0001")["outputs"]
    assert fit["n_records"] == 4 and fit["D2"] == pytest.approx(2.95)
    # a window that keeps fewer than four records is a non-convergence exit
    assert run(tmp_path, "fit", "--csv", str(path), "--uncertainty", "0.1") == 2
    assert run(tmp_path, "fit") == 1


def test_invariant_violation_exit_3(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,D_minus_a,E,E_plus_2m,eps,mu1,mu2,converged\n" + "\n".join(
        f"{a},{3 - a},-1,-0.5,0.1,-1,-0.5,true" for a in (2.5, 2.6, 2.7, 2.8)) + "\n")
    assert run(tmp_path, "fit", "--csv", str(bad), "--target", "energy_law") == 3
    diag = json.loads((tmp_path / "fit-0001" / "diagnostic.json").read_text())
    assert diag["error"] == "InvariantViolation"


def test_collapse_and_tail(tmp_path):
    assert run(tmp_path, "collapse", "--N", "1", *SMALL, "--steps", "8") == 0
    out = result(tmp_path / "collapse-0001")["outputs"]
    assert out["slope_relative_error"] < 1e-3
    assert run(tmp_path, "tail", "--N", "1", *SMALL) == 0
    assert result(tmp_path / "tail-0001")["outputs"]["kind"] == "algebraic"


def test_replay_is_deterministic(tmp_path):
    args = ["minimize", "--N", "2", *SMALL, "--D2", "2.95", "--ratio", "0.5", "--box-tol", "1e-3"]
    assert run(tmp_path, *args) == 0
    assert run(tmp_path, *args) == 0
    a, b = (result(tmp_path / f"minimize-000{i}")["outputs"] for i in (1, 2))
    assert a["objective"] == b["objective"] and a["multipliers"] == b["multipliers"]
    A = load_orbitals(tmp_path / "minimize-0001" / "minimizer.fvf").orbitals
    B = load_orbitals(tmp_path / "minimize-0002" / "minimizer.fvf").orbitals
    assert np.array_equal(A, B)


def test_console_script_entry():
    out = subprocess.run([sys.executable, "-m", "relfermi.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "constant" in out.stdout
