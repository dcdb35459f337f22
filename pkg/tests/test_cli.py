import json

import pytest
import yaml

from throttlesim.cli import main
from throttlesim.workload import load_trace


@pytest.fixture
def cfg_file(tmp_path, chain_data):
    chain_data["controller"] = {"tower": {"exploration_steps": 2, "learning_steps": 1}}
    chain_data["durations"]["measure_hours"] = 0.05
    chain_data["sweep"] = {"baseline": "k8s-fast", "thresholds": [0.5]}
    chain_data["correlate"] = {"services": ["db"], "rps": 30, "points": 3, "duration_s": 10}
    chain_data["fluctuate"] = {"base_rps": 30, "half_ranges": [0, 5], "windows": 2}
    chain_data["controller"]["targets"] = {"High": 0.06, "Low": 0.06}

    def write(data=chain_data):
        p = tmp_path / "cfg.yaml"
        p.write_text(yaml.safe_dump(data))
        return str(p)
    return write


def test_run_writes_files_and_summary(cfg_file, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", cfg_file(), "--out", str(out), "--seed", "3"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["controller"] == "autothrottle" and summary["hours"] == 1
    assert (out / "decision_log.csv").read_text().startswith(
        "minute,rps,bin,action_i,action_j,target_high,target_low,cost,slo_met,total_alloc_cores\n")
    assert (out / "hourly_report.csv").read_text().startswith(
        "hour,avg_alloc_cores,avg_used_cores,p99_ms,slo_violated\n")


def test_seed_override_changes_output(cfg_file, tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["run", "-c", cfg_file(), "-o", str(a), "--seed", "1"])
    main(["run", "-c", cfg_file(), "-o", str(b), "--seed", "2"])
    assert (a / "decision_log.csv").read_bytes() != (b / "decision_log.csv").read_bytes()


def test_sweep_correlate_fluctuate(cfg_file, tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["sweep", "-c", cfg_file(), "-o", str(out)]) == 0
    s = json.loads(capsys.readouterr().out)
    assert s["baseline"] == "k8s-fast" and s["best_threshold"] in (0.5, "none feasible")
    assert (out / "sweep.csv").exists()
    assert main(["correlate", "-c", cfg_file(), "-o", str(out)]) == 0
    c = json.loads(capsys.readouterr().out)
    assert c["correlation"][0]["service"] == "db"
    assert len((out / "correlation_points.csv").read_text().splitlines()) == 4
    assert main(["fluctuate", "-c", cfg_file(), "-o", str(out)]) == 0
    f = json.loads(capsys.readouterr().out)
    assert f["half_ranges"] == [0, 5] and len(f["median_p99_ms"]) == 2
    assert len((out / "fluctuation.csv").read_text().splitlines()) == 3


def test_sweep_none_feasible(cfg_file, chain_data, tmp_path, capsys):
    chain_data["slo"] = {"threshold_ms": 1}
    assert main(["sweep", "-c", cfg_file(chain_data), "-o", str(tmp_path / "o")]) == 0
    assert json.loads(capsys.readouterr().out)["best_threshold"] == "none feasible"


def test_gen_trace(tmp_path, capsys):
    p = tmp_path / "t.csv"
    assert main(["gen-trace", "--kind", "constant", "--duration", "60", "--min", "390", "--avg", "500",
                 "--max", "588", "-o", str(p)]) == 0
    tr = load_trace(p)
    assert len(tr) == 60
    assert json.loads(capsys.readouterr().out)["points"] == 60


def test_errors_exit_nonzero(tmp_path, chain_data, cfg_file, capsys):
    assert main(["run", "-c", str(tmp_path / "nope.yaml")]) != 0
    assert "error" in capsys.readouterr().err
    chain_data["slo"] = {"percentile": 2}
    assert main(["run", "-c", cfg_file(chain_data)]) != 0
    assert "slo.percentile" in capsys.readouterr().err
    assert main(["gen-trace", "--min", "5", "--avg", "1", "--max", "9", "-o", str(tmp_path / "x")]) != 0
    with pytest.raises(SystemExit):
        main(["bogus"])
