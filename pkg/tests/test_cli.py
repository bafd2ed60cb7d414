import csv
import io
import subprocess
import sys

import pytest

from emsdistill.cli import main


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("ws")
    data = root / "data"
    assert run("synth", "--out-dir", data, "--buildings", 2, "--weeks", 5, "--eval-weeks", 4) == 0
    return root, data


def test_pipeline(workspace, capsys):
    root, data = workspace
    ds = root / "d.jsonl"
    assert run("gen-data", "--data", data, "--seeds", "0,1", "--out", ds) == 0
    ckpt = root / "t.ckpt"
    assert run("train-dt", "--dataset", ds, "--size", "tiny", "--context", 4, "--max-steps", 3, "--batch", 4,
               "--out", ckpt) == 0
    capsys.readouterr()
    assert run("eval", "--ckpt", ckpt, "--data", data) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert [r["building_id"] for r in rows] == ["synth-arbitrage-0", "synth-arbitrage-1", "mean"]
    assert run("oracle", "--data", data, "--building", "synth-arbitrage-0", "--grid", 17,
               "--out", root / "o.csv") == 0
    assert (root / "o.csv").read_text().splitlines()[0] == "t,action_kwh,soe_kwh,grid_kwh,cost_eur"
    student = root / "s.ckpt"
    assert run("distill", "--teacher", ckpt, "--student-size", "tiny", "--dataset", ds, "--max-steps", 2,
               "--batch", 4, "--cache", root / "c.ckpt", "--out", student) == 0
    assert student.exists() and (root / "c.ckpt").exists()


def test_bench_and_report(workspace, capsys):
    root, data = workspace
    out = root / "bench"
    argv = ["bench", "--data", data, "--out-dir", out, "--seeds", "42", "--policies", "no_battery,rule_based",
            "--grid", 17]
    assert run(*argv) == 0
    assert "4 new computations" in capsys.readouterr().out
    assert run(*argv) == 0
    assert "0 new computations" in capsys.readouterr().out
    for name in ("results.csv", "results.md", "aggregate.json", "winners.json"):
        assert (out / name).exists()
    assert run("report", "--out-dir", out, "--format", "csv") == 0
    assert capsys.readouterr().out == (out / "results.csv").read_text()


def test_config_file(workspace, tmp_path, capsys):
    root, data = workspace
    (tmp_path / "c.cfg").write_text(f"# defaults\ndata = {data}\nbuilding = synth-arbitrage-1\ngrid = 9\n")
    assert run("oracle", "--config", tmp_path / "c.cfg") == 0
    assert capsys.readouterr().out.startswith("t,action_kwh")
    (tmp_path / "bad.cfg").write_text("colour = red\n")
    assert run("oracle", "--config", tmp_path / "bad.cfg", "--data", data, "--building", "x") == 1


def test_exit_codes(workspace, tmp_path):
    root, data = workspace
    assert run("frobnicate") == 1
    assert run("oracle", "--data", data) == 1
    assert run("oracle", "--data", tmp_path, "--building", "x") == 2
    assert run("oracle", "--data", data, "--building", "nope") == 2
    assert run("oracle", "--data", data, "--building", "synth-arbitrage-0", "--grid", 1) == 2
    assert run("report", "--out-dir", tmp_path) == 2
    assert run("eval", "--ckpt", tmp_path / "missing.ckpt", "--data", data) == 2


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "emsdistill.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "bench" in out.stdout
    out = subprocess.run([sys.executable, "-m", "emsdistill.cli", "bogus"], capture_output=True, text=True)
    assert out.returncode == 1
