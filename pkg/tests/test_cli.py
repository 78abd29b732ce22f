from __future__ import annotations

import json
import os
import subprocess
import sys

import pytest

from witnessnet.cli import EXIT_INVALID, EXIT_OK, EXIT_UNVERIFIED, main
from witnessnet.harness import bundled


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["run", "cycling", "--out", str(out), "--format", "csv"]) == EXIT_OK
    return out


def test_run_writes_artifacts(run_dir):
    assert sorted(p.name for p in run_dir.iterdir()) == ["ledger.jsonl", "report.csv", "report.jsonl"]


def test_verify_ok_and_tampered(run_dir, tmp_path, capsys):
    assert main(["verify", str(run_dir / "ledger.jsonl")]) == EXIT_OK
    assert capsys.readouterr().out.startswith("ok: ")
    lines = (run_dir / "ledger.jsonl").read_bytes().split(b"\n")
    line = bytearray(lines[7])
    line[len(line) // 2] ^= 0x02
    lines[7] = bytes(line)
    bad = tmp_path / "bad.jsonl"
    bad.write_bytes(b"\n".join(lines))
    assert main(["verify", str(bad)]) == EXIT_UNVERIFIED
    assert "failed at height 7" in capsys.readouterr().out
    assert main(["verify", str(tmp_path / "missing.jsonl")]) == EXIT_UNVERIFIED


def test_report_rerenders(run_dir, capsys):
    assert main(["report", str(run_dir)]) == EXIT_OK
    assert "pearson(mean)" in capsys.readouterr().out
    assert main(["report", str(run_dir / "nope")]) == EXIT_INVALID


def test_validate(tmp_path, capsys):
    assert main(["validate", "testnet"]) == EXIT_OK
    assert capsys.readouterr().out.startswith("valid: testnet")
    data = json.loads(bundled("testnet").read_text())
    data["assignments"][0]["participants"] = ["ghost"]
    path = tmp_path / "bad.scenario"
    path.write_text(json.dumps(data))
    assert main(["validate", str(path)]) == EXIT_INVALID
    assert "unknown participant 'ghost'" in capsys.readouterr().err
    assert main(["run", str(path)]) == EXIT_INVALID
    assert main(["validate", "no-such-scenario"]) == EXIT_INVALID


def test_module_entry_point_and_log_level(tmp_path):
    env = {**os.environ, "WITNESSNET_LOG": "INFO"}
    proc = subprocess.run([sys.executable, "-m", "witnessnet", "run", "cycling", "--out", str(tmp_path)],
                          capture_output=True, text=True, env=env, check=False)
    assert proc.returncode == 0
    assert "INFO witnessnet: running cycling" in proc.stderr
    assert "run report: cycling" in proc.stdout
    quiet = subprocess.run([sys.executable, "-m", "witnessnet", "validate", "cycling"],
                           capture_output=True, text=True, check=False)
    assert quiet.stderr == ""
