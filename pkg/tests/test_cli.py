import csv
import subprocess
import sys

import pytest

from occtrack.cli import main


def test_selftest_subset_exits_zero(capsys):
    assert main(["selftest", "--only", "1", "6"]) == 0
    out = capsys.readouterr().out
    assert "[PASS]  1" in out and "[PASS]  6" in out and "2/2 criteria passed" in out


def test_simulate_track_evaluate_sphere(tmp_path):
    seq, pred, rep = tmp_path / "seq", tmp_path / "pred", tmp_path / "rep"
    assert main(["simulate", "--scene", "sphere", "--out", str(seq)]) == 0
    assert main(["track", "--seq", str(seq), "--out", str(pred), "--set", "pipeline.seed=0"]) == 0
    assert main(["evaluate", "--pred", str(pred), "--gt", str(seq), "--out", str(rep)]) == 0
    rows = list(csv.DictReader(open(rep / "report.csv")))
    assert len(rows) == 1
    assert 0.0 <= float(rows[0]["add_auc"]) <= 100.0
    assert float(rows[0]["adds_auc"]) >= float(rows[0]["add_auc"])
    assert rows[0]["chamfer_m"] not in ("", "nan")


def test_missing_manifest_exit_one(tmp_path, capsys):
    assert main(["track", "--seq", str(tmp_path), "--out", str(tmp_path / "o")]) == 1
    assert "manifest.txt" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["frobnicate"],
    ["track", "--seq"],
    ["simulate", "--scene", "no_such_scene", "--out", "x"],
    ["track", "--seq", ".", "--out", "x", "--set", "nosuch.key=1"],
])
def test_bad_usage_exit_one(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 1


def test_bad_config_value_exit_one(tmp_path):
    assert main(["simulate", "--scene", "sphere", "--out", str(tmp_path / "s")]) == 0
    assert main(["track", "--seq", str(tmp_path / "s"), "--out", str(tmp_path / "o"),
                 "--set", "tsdf.voxel_size=-1"]) == 1


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "occtrack", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "selftest" in r.stdout
