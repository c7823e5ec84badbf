import csv
import json
import subprocess
import sys

import pytest

from fdmac import cli


def run(tmp_path, *args, name="out.csv"):
    out = tmp_path / name
    code = cli.main([*args, "--out", str(out)])
    rows = list(csv.DictReader(out.open())) if out.exists() else []
    return code, rows, out


def test_model_schema_and_probabilities(tmp_path):
    code, rows, out = run(tmp_path, "model", "--n", "20", "--n-h", "0,4", "--W", "256,512")
    assert code == cli.EXIT_OK
    assert list(rows[0]) == cli.COLUMNS and len(rows) == 4
    for r in rows:
        for k in ("alpha", "beta", "p", "alpha_ap", "beta_ap", "p_ap"):
            assert 0 <= float(r[k]) <= 1
        assert float(r["residual"]) <= 1e-10
    side = json.loads((tmp_path / "out.csv.config.json").read_text())
    assert side["command"] == "model" and side["config"]["W"] == [256, 512]
    assert side["timing"]["tau_F"] == 74 and side["errors"] == []


def test_model_rising_with_clients_without_hidden(tmp_path):
    code, rows, _ = run(tmp_path, "model", "--n", "4,8,12,16,20,24", "--n-h", "0", "--W", "1024")
    thr = [float(r["throughput_system"]) for r in rows]
    assert code == 0 and thr == sorted(thr)


def test_simulate_seed_rows_and_aggregate(tmp_path):
    code, rows, _ = run(tmp_path, "simulate", "--n", "6", "--n-h", "1", "--W", "64",
                        "--slots", "200000", "--seeds", "1,2,3", "--ci-target", "1")
    assert code == 0 and len(rows) == 4
    assert [r["seed"] for r in rows[:3]] == ["1", "2", "3"]
    assert rows[3]["seed"].startswith("aggregate(")
    mean = sum(float(r["throughput_system"]) for r in rows[:3]) / 3
    assert float(rows[3]["throughput_system"]) == pytest.approx(mean)
    assert float(rows[3]["ci_halfwidth"]) > 0


def test_simulate_extends_seeds_within_budget(tmp_path):
    code, rows, _ = run(tmp_path, "simulate", "--n", "6", "--n-h", "1", "--W", "64",
                        "--slots", "100000", "--seeds", "1,2", "--ci-target", "0",
                        "--slot-budget", "400000")
    assert code == 0 and len(rows) == 5 and rows[-1]["seed"] == "aggregate(budget)"


def test_precision_at_ten_million_slots(tmp_path):
    code, rows, _ = run(tmp_path, "simulate", "--n", "20", "--n-h", "4", "--W", "512",
                        "--slots", "10000000", "--seeds", "1,2,3", "--ci-target", "1")
    thr = [float(r["throughput_system"]) for r in rows[:3]]
    import numpy as np
    assert np.std(thr, ddof=1) / np.sqrt(3) / np.mean(thr) <= 0.02


def test_gain_identity():
    a = {"throughput_system": 0.5}
    fd, hd = cli.gain_rows(a, dict(a))
    assert fd["gain"] == hd["gain"] == 1.0


def test_gain_command(tmp_path):
    code, rows, _ = run(tmp_path, "gain", "--n", "8,16,24,32", "--n-h", "0", "--W", "256")
    fd = [float(r["gain"]) for r in rows if r["mode"] == "fd"]
    assert code == 0 and len(rows) == 8
    assert all(a > b for a, b in zip(fd, fd[1:]))
    assert all(1 < float(r["gain_estimate"]) <= 2 for r in rows if r["mode"] == "fd")


def test_gain_random_topologies(tmp_path):
    code, rows, _ = run(tmp_path, "gain", "--topology", "random", "--n", "8", "--W", "128,512",
                        "--topologies", "3")
    assert code == 0 and len(rows) == 4
    assert all(float(r["gain"]) > 1 for r in rows)


def test_figures(tmp_path):
    figs = tmp_path / "figs"
    figs.mkdir()
    code, _, _ = run(tmp_path, "gain", "--n", "20", "--n-h", "0,8", "--W", "128,512,2048",
                     "--figures", str(figs))
    assert code == 0
    assert {p.name for p in figs.iterdir()} == {"out_throughput.png", "out_gain.png",
                                               "out_gain_estimate.png"}


def test_validate_flags_drift_without_crashing(tmp_path, capsys):
    code, rows, out = run(tmp_path, "validate", "--n", "20", "--n-h", "4", "--W", "512",
                          "--slots", "1000000", "--seeds", "1,2", "--tau-c-variant", "prose")
    text = capsys.readouterr().out
    assert code == cli.EXIT_VALIDATION
    assert "FAIL  model vs sim (20, 4, 512)" in text
    assert "PASS  slot conservation" in text
    side = json.loads((tmp_path / "out.csv.config.json").read_text())
    assert any(not c["ok"] for c in side["checks"])
    assert {r["engine"] for r in rows} == {"model", "sim"}


@pytest.mark.parametrize("args", [
    ["model", "--W", ""],
    ["model", "--n-h", ""],
    ["model", "--phy", "bogus=1"],
    ["model", "--phy", "payload_bytes"],
    ["model", "--W", "x"],
    ["simulate", "--seeds", ""],
])
def test_usage_errors(tmp_path, args):
    assert cli.main([*args, "--out", str(tmp_path / "x.csv")]) == cli.EXIT_USAGE


def test_missing_output_directory(tmp_path):
    assert cli.main(["model", "--out", str(tmp_path / "nope" / "x.csv")]) == cli.EXIT_USAGE


def test_solver_failure_exit_code(tmp_path):
    code, rows, out = run(tmp_path, "model", "--n", "20", "--n-h", "4", "--W", "512",
                          "--max-iters", "2")
    side = json.loads((tmp_path / "out.csv.config.json").read_text())
    assert code == cli.EXIT_SOLVER and side["errors"] and rows[0]["throughput_system"] == ""


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n": [12], "n_h": [3], "W": [64, 128]}))
    code, rows, _ = run(tmp_path, "model", "--config", str(cfg), "--W", "256")
    assert code == 0 and [r["W"] for r in rows] == ["256"] and rows[0]["n"] == "12"
    cfg.write_text(json.dumps({"bogus": 1}))
    assert cli.main(["model", "--config", str(cfg), "--out", str(tmp_path / "y.csv")]) == cli.EXIT_USAGE


def test_phy_override_changes_timing(tmp_path):
    code, _, out = run(tmp_path, "model", "--n", "20", "--n-h", "0", "--W", "512",
                       "--phy", "payload_bytes=500")
    side = json.loads((tmp_path / "out.csv.config.json").read_text())
    assert code == 0 and side["timing"]["L_p"] < 40


def test_topology_command(tmp_path, capsys):
    assert cli.main(["topology", "ring", "--n", "20", "--n-h", "4"]) == 0
    text = capsys.readouterr().out
    assert text.startswith("# topology kind=ring_circulant")
    assert cli.main(["topology", "ring", "--n", "20", "--n-h", "30"]) == cli.EXIT_USAGE


def test_workers_env_gives_same_rows(tmp_path, monkeypatch):
    args = ["model", "--n", "20", "--n-h", "0,4,8", "--W", "256,512"]
    _, serial, _ = run(tmp_path, *args, name="a.csv")
    monkeypatch.setenv(cli.WORKERS_ENV, "2")
    _, parallel, _ = run(tmp_path, *args, name="b.csv")
    assert serial == parallel


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "fdmac.cli", "model", "--n", "8", "--n-h", "0",
                        "--W", "64", "--out", str(tmp_path / "e.csv")], capture_output=True, text=True)
    assert r.returncode == 0 and (tmp_path / "e.csv").exists()
