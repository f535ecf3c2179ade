import json
import subprocess
import sys

import pytest

from rilt.cli import EXIT_FLAG, EXIT_INVALID, EXIT_OK, EXIT_USAGE, main


def run(tmp_path, *argv):
    return main([argv[0], "--out-root", str(tmp_path / "runs"), *argv[1:]])


def test_law_validate_default(tmp_path, capsys):
    assert run(tmp_path, "law-validate") == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["compliant"] and out["failures"] == []


def test_law_validate_srw_is_invalid(tmp_path, capsys):
    assert run(tmp_path, "law-validate", "--law", "srw") == EXIT_INVALID
    assert "strong aperiodicity" in json.loads(capsys.readouterr().out)["failures"]


def test_law_file(tmp_path, law):
    p = tmp_path / "mine.json"
    p.write_text(law.to_json())
    assert run(tmp_path, "law-validate", "--law", str(p)) == EXIT_OK


def test_kernel_refuses_periodic_law(tmp_path):
    assert run(tmp_path, "kernel", "--law", "srw", "--radius", "8") == EXIT_INVALID


def test_usage_errors(tmp_path):
    assert main(["law-validate", "--no-such-flag"]) == EXIT_USAGE
    assert main([]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE


def test_count_writes_csv(tmp_path, capsys):
    csv = tmp_path / "b.csv"
    assert run(tmp_path, "count", "--n", "200", "--k", "3", "--offsets", "0,0;1,0", "--csv", str(csv)) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    lines = csv.read_text().splitlines()
    assert lines[0] == "i,B_k,B_tilde" and len(lines) == 202
    assert int(lines[-1].split(",")[1]) == out["B_k"]


def test_count_bad_offsets(tmp_path):
    assert run(tmp_path, "count", "--k", "3", "--offsets", "0,0") == EXIT_INVALID


def test_martingale_check(tmp_path, capsys):
    assert run(tmp_path, "martingale-check", "--replicas", "5", "--n", "30", "--k", "3") == EXIT_OK
    assert json.loads(capsys.readouterr().out)["passed"]


def test_couple_and_gamma(tmp_path):
    assert run(tmp_path, "couple", "--n", "256", "--replicas", "2") == EXIT_OK
    assert run(tmp_path, "gamma", "--m", "4096", "--tau", "0.2", "--replicas", "1") == EXIT_OK
    assert len(list((tmp_path / "runs").glob("couple-*/report.json"))) == 1


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"experiment": "holder", "replicas": 5}))
    assert run(tmp_path, "holder", "--config", str(bad)) == EXIT_INVALID
    other = tmp_path / "other.json"
    other.write_text(json.dumps({"experiment": "kernel"}))
    assert run(tmp_path, "invariance", "--config", str(other)) == EXIT_INVALID
    assert run(tmp_path, "report") == EXIT_INVALID


def test_report_run_and_collect(tmp_path, capsys):
    cfg = tmp_path / "plan.json"
    cfg.write_text(json.dumps({"experiment": "counting", "params": {"cases": 50}}))
    # fewer cases than the acceptance rule requires: the flag fails
    assert run(tmp_path, "report", "--config", str(cfg)) == EXIT_FLAG
    capsys.readouterr()
    assert run(tmp_path, "report", "--collect", str(tmp_path / "runs")) == EXIT_FLAG
    rows = json.loads(capsys.readouterr().out)
    assert rows == [{"run": rows[0]["run"], "rule": "C1", "passed": False}]


def test_console_script():
    r = subprocess.run([sys.executable, "-m", "rilt.cli", "law-validate", "--grid", "64"], capture_output=True, text=True)
    assert r.returncode == 0
    assert json.loads(r.stdout)["phi_grid_resolution"] == 64
