import csv
import json
import os
import subprocess
import sys

import pytest

from carpetks import __version__
from carpetks.cli import main

SC = {"D": 2, "a": 3, "S": [[0, 0], [0, 1], [0, 2], [1, 0], [1, 2], [2, 0], [2, 1], [2, 2]]}
SMALL_VERIFY = ["--member-levels", "3:5", "--n-range", "2:3", "--rho-levels", "3:5", "--samples", "20000"]


@pytest.fixture
def sc_json(tmp_path):
    path = tmp_path / "sc.json"
    path.write_text(json.dumps(SC))
    return str(path)


def _files(root):
    out = {}
    for dirpath, _, names in os.walk(root):
        for name in names:
            full = os.path.join(dirpath, name)
            out[os.path.relpath(full, root)] = open(full, "rb").read()
    return out


def _replay_identical(artifact, tmp_path, name):
    original = os.path.dirname(artifact)
    again = tmp_path / name
    assert main(["replay", artifact, "--out", str(again)]) == 0
    a, b = _files(original), _files(again)
    b.pop("carpet_spec.json", None)
    assert a.keys() <= b.keys()
    for key in a:
        assert a[key] == b[key], key


def test_validate(sc_json, tmp_path, capsys):
    assert main(["validate", "--spec", sc_json]) == 0
    assert "valid=True" in capsys.readouterr().out
    full = tmp_path / "full.json"
    full.write_text(json.dumps({**SC, "S": SC["S"] + [[1, 1]]}))
    assert main(["validate", "--spec", str(full)]) == 1
    lopsided = tmp_path / "lopsided.json"
    lopsided.write_text(json.dumps({**SC, "S": SC["S"][1:]}))
    assert main(["validate", "--spec", str(lopsided), "--out", str(tmp_path / "v")]) == 1
    report = json.loads((tmp_path / "v" / "validation.json").read_text())
    assert report["report"]["valid"] is False and report["report"]["symmetry"] is False
    assert report["version"] == __version__


def test_graph_header(sc_json, tmp_path):
    out = tmp_path / "g"
    assert main(["graph", "--spec", sc_json, "--n", "1", "--out", str(out)]) == 0
    header = json.loads((out / "graph_n1.json").read_text())
    assert header["edge_count"] == 12 and header["vertex_count"] == 8
    assert header["config"]["carpet_spec"]["a"] == 3
    with open(out / "edges_n1.csv") as fh:
        assert sum(1 for _ in csv.reader(fh)) == 13
    _replay_identical(str(out / "graph_n1.json"), tmp_path, "g2")


def test_rho_range_syntax(sc_json, tmp_path):
    out = tmp_path / "r"
    assert main(["rho", "--spec", sc_json, "--p", "2", "--levels", "3:5", "--out", str(out)]) == 0
    payload = json.loads((out / "rho.json").read_text())
    assert 1.20 <= payload["rho_hat"] <= 1.31
    assert payload["levels"] == [3, 4, 5] and payload["k"] == 4
    _replay_identical(str(out / "rho.json"), tmp_path, "r2")


def test_solve_and_replay(tmp_path):
    out = tmp_path / "s"
    assert main(["solve", "-n", "2", "-p", "3", "--out", str(out)]) == 0
    rep = json.loads((out / "solve_n2.json").read_text())["report"]
    assert rep["residual"] <= 1e-8 and rep["converged"] and rep["wall_time"] is None
    _replay_identical(str(out / "solve_n2.json"), tmp_path, "s2")


def test_solve_nonconvergence_exit_2(tmp_path):
    args = ["solve", "-n", "4", "-p", "1.1", "--max-iter", "3", "--out", str(tmp_path / "x")]
    assert main(args) == 2


@pytest.mark.parametrize("quantity", ["A", "annulus", "ks", "poincare", "holder", "ahlfors"])
def test_functional_replay(tmp_path, quantity):
    out = tmp_path / quantity
    args = ["functional", "--quantity", quantity, "--function", "harmonic:4", "--levels", "2", "--beta", "2.09",
            "--samples", "4000", "--seed", "3", "--out", str(out)]
    if quantity in ("ks", "ahlfors"):
        args += ["--radii", "0.3", "0.1"]
    assert main(args) == 0
    payload = json.loads((out / f"functional_{quantity}.json").read_text())
    assert payload["config"]["seed"] == 3 and payload["version"] == __version__
    _replay_identical(str(out / f"functional_{quantity}.json"), tmp_path, quantity + "_again")


def test_functional_threads_do_not_change_numbers(tmp_path):
    base = ["functional", "--quantity", "A", "--function", "harmonic:5", "--levels", "2:3", "--beta", "2.09", "--samples", "30000"]
    assert main(base + ["--threads", "1", "--out", str(tmp_path / "t1")]) == 0
    assert main(base + ["--threads", "3", "--out", str(tmp_path / "t3")]) == 0
    assert (tmp_path / "t1" / "functional_A.csv").read_bytes() == (tmp_path / "t3" / "functional_A.csv").read_bytes()


def test_verify_exit_codes(tmp_path):
    ok = tmp_path / "ok"
    assert main(["verify", *SMALL_VERIFY, "--out", str(ok)]) == 0
    assert (ok / "index.csv").exists() and (ok / "summary.json").exists()
    _replay_identical(str(ok / "summary.json"), tmp_path, "ok_again")
    # an unreachable stability threshold is reported as a numerical failure
    assert main(["verify", *SMALL_VERIFY, "--threshold", "1e-15", "--out", str(tmp_path / "tight")]) == 2
    assert main(["verify", *SMALL_VERIFY, "--tail-policy", "strict", "--out", str(tmp_path / "strict")]) == 3


def test_verify_subcritical_refused(tmp_path, capsys):
    args = ["verify", "-p", "1.1", *SMALL_VERIFY[:4], "--rho-levels", "2:4", "--out", str(tmp_path / "sub")]
    assert main(args) == 1
    assert "is equivalent to the bound" in capsys.readouterr().err


def test_config_errors(tmp_path):
    assert main(["solve", "-n", "2", "-p", "0.5", "--out", str(tmp_path / "a")]) == 1
    assert main(["functional", "--function", "nope", "--beta", "2.1", "--out", str(tmp_path / "b")]) == 1
    assert main(["verify", "--n-range", "2", "--out", str(tmp_path / "c")]) == 1


@pytest.mark.parametrize("argv", [["graph", "-n", "1", "--bogus"], ["frobnicate"], ["rho", "--levels", "3:x"], []])
def test_usage_errors_exit_1(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 1
    assert "usage" in capsys.readouterr().err


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "carpetks", "graph", "-n", "1", "--unknown"], capture_output=True, text=True)
    assert proc.returncode == 1 and "usage" in proc.stderr
    proc = subprocess.run([sys.executable, "-m", "carpetks", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and __version__ in proc.stdout
