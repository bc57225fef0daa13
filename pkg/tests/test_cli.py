import json
import subprocess
import sys

import pytest

from leaksim.cli import main


def run(capsys, *argv):
    rc = main(list(argv))
    out, err = capsys.readouterr()
    return rc, out, err


def test_analytic_eq1(capsys):
    rc, out, _ = run(capsys, "analytic", "eq1")
    assert rc == 0
    assert json.loads(out)["eq1"] == pytest.approx(0.10039994, abs=1e-8)


def test_analytic_eq2_custom_inputs(capsys):
    rc, out, _ = run(capsys, "analytic", "eq2", "--p-ell", "0", "--p-lt", "0")
    assert rc == 0 and json.loads(out)["eq2"] == 0


def test_analytic_eq3(capsys):
    rc, out, _ = run(capsys, "analytic", "eq3")
    assert set(json.loads(out)["eq3"]) == {"0", "1", "2", "3"}
    rc, out, _ = run(capsys, "analytic", "eq3", "--r", "1")
    assert json.loads(out)["eq3"]["1"] == 15 / 256


def test_analytic_bad_input(capsys):
    rc, _, err = run(capsys, "analytic", "eq1", "--p-lt", "2")
    assert rc == 2 and json.loads(err)["error"] == "config"
    rc, _, err = run(capsys, "analytic", "eq3", "--r", "-1")
    assert rc == 2 and json.loads(err)["field"] == "r"


def test_simulate(tmp_path, capsys):
    out_dir = tmp_path / "run"
    rc, out, _ = run(capsys, "simulate", "--distance", "3", "--p", "1e-3", "--cycles", "1", "--shots", "200",
                     "--policy", "eraser", "--lrc", "swap", "--transport", "sticky", "--readout", "two-level",
                     "--seed", "3", "--out", str(out_dir), "--emit-svg")
    assert rc == 0
    doc = json.loads(out)
    assert doc["summary"]["shots"] == 200
    assert (out_dir / "summary.csv").exists() and (out_dir / "lpr.svg").exists()
    assert (out_dir / "manifest.json").exists()


def test_simulate_config_file_with_override(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"distance": 3, "shots": 50, "seed": 1, "output_path": str(tmp_path / "a")}))
    rc, out, _ = run(capsys, "simulate", "--config", str(cfg), "--shots", "70")
    assert rc == 0 and json.loads(out)["summary"]["shots"] == 70


def test_simulate_same_seed_same_hash(tmp_path, capsys):
    args = ["simulate", "--shots", "100", "--seed", "2"]
    _, a, _ = run(capsys, *args, "--out", str(tmp_path / "a"))
    _, b, _ = run(capsys, *args, "--out", str(tmp_path / "b"))
    assert json.loads(a)["content_hash"] == json.loads(b)["content_hash"]
    assert (tmp_path / "a" / "lpr.csv").read_bytes() == (tmp_path / "b" / "lpr.csv").read_bytes()


@pytest.mark.parametrize(
    "argv,field",
    [
        (["simulate", "--distance", "4"], "distance"),
        (["simulate", "--shots", "0"], "shots"),
        (["simulate", "--p", "0.9"], "physical_error_rate"),
        (["simulate", "--policy", "sometimes"], "<args>"),
        (["simulate", "--distance", "three"], "<args>"),
        (["bogus"], "<args>"),
        ([], "<args>"),
    ],
)
def test_config_errors(tmp_path, capsys, argv, field):
    rc, out, err = run(capsys, *argv, *(["--out", str(tmp_path / "x")] if argv[:1] == ["simulate"] else []))
    assert rc == 2 and out == ""
    doc = json.loads(err)
    assert doc["error"] == "config" and doc["field"] == field
    assert not (tmp_path / "x").exists()


def test_missing_config_file(tmp_path, capsys):
    rc, _, err = run(capsys, "simulate", "--config", str(tmp_path / "nope.json"))
    assert rc == 1 and json.loads(err)["error"] == "io"


def test_sweep(tmp_path, capsys):
    doc = {"defaults": {"shots": 100}, "configs": [{"distance": 3}, {"distance": 5}]}
    path = tmp_path / "sweep.json"
    path.write_text(json.dumps(doc))
    rc, out, _ = run(capsys, "sweep", "--config", str(path), "--out", str(tmp_path / "sw"), "--emit-svg")
    assert rc == 0 and json.loads(out)["configs"] == 2
    for name in ("sweep.csv", "ler_vs_distance.svg", "lpr_vs_round.svg"):
        assert (tmp_path / "sw" / name).exists()
    assert (tmp_path / "sw" / "run_001" / "summary.csv").exists()


def test_sweep_bad_member(tmp_path, capsys):
    path = tmp_path / "sweep.json"
    path.write_text(json.dumps([{"policy": "nah"}]))
    rc, _, err = run(capsys, "sweep", "--config", str(path))
    assert rc == 2 and json.loads(err)["field"] == "configs[0].policy"


def test_dmstab(tmp_path, capsys):
    rc, out, _ = run(capsys, "dmstab", "--out", str(tmp_path / "dm"), "--emit-svg")
    assert rc == 0
    assert set(json.loads(out)["outputs"]) == {"dm_study.csv", "dm_leak.svg", "dm_correct.svg"}


def test_dmstab_bad_params(tmp_path, capsys):
    rc, _, err = run(capsys, "dmstab", "--out", str(tmp_path / "dm"), "--p-t", "3")
    assert rc == 2 and json.loads(err)["error"] == "config"


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "leaksim.cli", "simulate", "--distance", "2"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 2
    assert json.loads(proc.stderr)["field"] == "distance"
    proc = subprocess.run([sys.executable, "-m", "leaksim.cli", "analytic", "eq2"], capture_output=True, text=True)
    assert proc.returncode == 0 and "eq2" in json.loads(proc.stdout)
