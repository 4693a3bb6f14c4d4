import json
import os

import pytest

from concentra.cli import main, parse_config
from concentra.errors import ValidationError


def _write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def _manifest_ok(out):
    man = json.loads((out / "manifest.json").read_text())
    listed = {f["path"] for f in man["files"]}
    present = {str(p.relative_to(out)) for p in out.rglob("*") if p.is_file()} - {"manifest.json"}
    assert listed == present
    return man


def test_parse_config_sections_and_errors():
    cfg = parse_config("command = reduce  # trailing\nproblem.n = 1\n\nnumerics.eps = 0.2, 0.1\n")
    assert cfg.problem == {"n": "1"} and cfg.floats("numerics.eps") == [0.2, 0.1]
    for bad, field in [("problem.n = 1\n", "command"), ("command = fly\n", "command"),
                       ("command = cc\nfoo.x = 1\n", "foo.x"), ("command = cc\nn = 1\n", "n"),
                       ("command = cc\nproblem.p = 2\nproblem.p = 3\n", "problem.p")]:
        with pytest.raises(ValidationError) as exc:
            parse_config(bad)
        assert exc.value.field == field


def test_digest_ignores_comments_and_order():
    a = parse_config("command = cc\nproblem.p = 2\nnumerics.seed = 1\n")
    b = parse_config("# c\nnumerics.seed = 1\ncommand = cc\nproblem.p   =  2\n")
    assert a.digest == b.digest


def test_ground_state_run(tmp_path):
    cfg = _write(tmp_path, "command = ground-state\nproblem.n = 1\nproblem.p = 3\n")
    assert main(["--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    man = _manifest_ok(tmp_path / "o")
    assert man["status"] == "ok" and "ground_state_n1_p3.txt" in {f["path"] for f in man["files"]}


def test_reduce_deterministic_across_threads(tmp_path):
    text = ("command = reduce\nproblem.n = 1\nproblem.p = 3\nproblem.V = x^2\n"
            "numerics.eps = 0.2, 0.1\nnumerics.multistart = 5\n")
    cfg = _write(tmp_path, text)
    assert main(["--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["--config", str(cfg), "--out", str(tmp_path / "b"), "--threads", "2"]) == 0
    a = (tmp_path / "a" / "concentration_points.csv").read_bytes()
    assert a == (tmp_path / "b" / "concentration_points.csv").read_bytes()
    assert len(a.decode().splitlines()) == 3
    _manifest_ok(tmp_path / "a")


def test_validation_exit_code_names_field(tmp_path, capsys):
    cfg = _write(tmp_path, "command = reduce\nproblem.n = 1\nproblem.p = 0.5\n")
    assert main(["--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "problem.p" in capsys.readouterr().err


def test_solver_failure_exit_code(tmp_path, capsys):
    cfg = _write(tmp_path, "command = homoclinic\nnumerics.offset = -0.05\n")
    out = tmp_path / "o"
    assert main(["--config", str(cfg), "--out", str(out)]) == 3
    rec = json.loads((out / "error.json").read_text())
    assert rec["kind"] == "trivial attractor"
    assert "trivial attractor" in capsys.readouterr().err
    assert _manifest_ok(out)["status"] == "failed"


def test_cc_and_constants(tmp_path):
    cfg = _write(tmp_path, "command = cc\nnumerics.profiles = 2\nproblem.kinds = spreading, dichotomy_pair\n")
    assert main(["--config", str(cfg), "--out", str(tmp_path / "cc")]) == 0
    rows = (tmp_path / "cc" / "lions.csv").read_text().splitlines()
    assert len(rows) == 5 and all(r.split(",")[2] == r.split(",")[3] for r in rows[1:])
    cfg = _write(tmp_path, "command = constants\nproblem.task = probe\nproblem.N = 3\nproblem.k = 2\n"
                 "numerics.m = 1, 8\n", "c.cfg")
    assert main(["--config", str(cfg), "--out", str(tmp_path / "k")]) == 0
    _manifest_ok(tmp_path / "k")


def test_geodesics_with_loops(tmp_path):
    cfg = _write(tmp_path, "command = geodesics\nproblem.N = 2\nproblem.phi = s*exp(-s^2)\n"
                 "numerics.multistart = 2\nnumerics.refine_eps = 0.01\n")
    assert main(["--config", str(cfg), "--out", str(tmp_path / "g")]) == 0
    man = _manifest_ok(tmp_path / "g")
    assert sum(f["path"].startswith("loops/") for f in man["files"]) == 2


def test_missing_config_file(tmp_path):
    assert main(["--config", str(tmp_path / "nope.cfg")]) == 2
