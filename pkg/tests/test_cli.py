import json
import subprocess
import sys

import numpy as np
import pytest

from qdpo.cli import STAGES, main, resolve_threads, sha256, stage_seed

FAST = ["--shots", "4000"]


def run_cli(out, *args, seed=3):
    return main(["--out", str(out), "--seed", str(seed), *args])


@pytest.fixture(scope="module")
def built(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert run_cli(out, "--config", "fixture", "ingest") == 0
    assert run_cli(out, "build") == 0
    return out


def read_counts(path):
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "bitstring,count"
    return {k: int(v) for k, v in (line.split(",") for line in lines[1:])}


def test_stage_seeds_distinct_and_stable():
    seeds = [stage_seed(7, s) for s in STAGES]
    assert len(set(seeds)) == len(STAGES)
    assert seeds == [stage_seed(7, s) for s in STAGES]
    assert stage_seed(8, "isqr") != stage_seed(7, "isqr")


def test_threads_flag_then_env(monkeypatch):
    monkeypatch.delenv("QDPO_THREADS", raising=False)
    assert resolve_threads(None) == 1
    monkeypatch.setenv("QDPO_THREADS", "3")
    assert resolve_threads(None) == 3
    assert resolve_threads(2) == 2


def test_ingest_and_build_outputs(built):
    for name in ("config.json", "market.json", "prices.csv", "qubo.json", "ising.json",
                 "ansatz.json", "manifest.json"):
        assert (built / name).exists(), name
    q = json.loads((built / "qubo.json").read_text())
    assert q["n_vars"] == 8
    man = json.loads((built / "manifest.json").read_text())
    assert [r["subcommand"] for r in man["runs"]] == ["ingest", "build"]
    for name, digest in man["files"].items():
        assert sha256(built / name) == digest


def test_solve_vqe_smoke_default_shots(built):
    assert run_cli(built, "solve-vqe") == 0
    counts = read_counts(built / "samples.csv")
    assert sum(counts.values()) == 1_000_000
    assert all(len(k) == 8 and set(k) <= {"0", "1"} for k in counts)
    theta = json.loads((built / "theta.json").read_text())
    assert len(theta["theta"]) == 24


def test_global_flags_after_subcommand(tmp_path):
    assert main(["ingest", "--config", "fixture", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "market.json").exists()


def test_report_row_set(tmp_path):
    assert run_cli(tmp_path, "--config", "fixture", "ingest") == 0
    for cmd in (["build"], ["solve-vqe", *FAST], ["isqr"],
                ["baseline", "--random-samples", "20000", "--sa-sweeps", "200"], ["report"]):
        assert run_cli(tmp_path, *cmd) == 0, cmd
    rep = json.loads((tmp_path / "report.json").read_text())
    assert [r["row"] for r in rep["rows"]] == ["raw", "isqr", "random", "sa", "exhaustive"]
    lines = (tmp_path / "report.csv").read_text().splitlines()
    assert lines[0].startswith("row,min_cost,pct_below_offset")
    assert len(lines) == 6
    ex = rep["rows"][-1]
    assert ex["bitstring"] == "10011100" and ex["pct_below_offset"] == 100.0
    assert all(r["min_cost"] >= ex["min_cost"] - 1e-12 for r in rep["rows"])


def test_vqec_and_frontier_outputs(built):
    assert run_cli(built, "solve-vqec", *FAST) == 0
    s = json.loads((built / "vqec" / "strategy.json").read_text())
    w = np.array(s["weights"])
    assert s["normalized"] and np.allclose(w.sum(axis=1), 1)
    assert (built / "vqec" / "t1" / "samples.csv").exists()
    assert run_cli(built, "frontier", "--points", "8") == 0
    lines = (built / "frontier_t0.csv").read_text().splitlines()
    assert lines[0] == "volatility,return" and 2 <= len(lines) <= 9


def test_missing_artifact_gives_error_json(tmp_path, capsys):
    assert run_cli(tmp_path, "build") == 1
    err = json.loads(capsys.readouterr().err)
    assert err["subcommand"] == "build" and "market.json" in err["message"]
    assert json.loads((tmp_path / "error.json").read_text()) == err


def test_bad_config_gives_error_json(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("{}")
    assert run_cli(tmp_path / "out", "--config", str(cfg), "ingest") == 1
    assert json.loads(capsys.readouterr().err)["error"] == "KeyError"


def test_unknown_subcommand_exits_2():
    proc = subprocess.run([sys.executable, "-m", "qdpo.cli", "solve-everything"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert "usage:" in proc.stderr
