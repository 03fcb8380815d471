"""Exit codes and artifacts of the command line interface."""

import json

import pytest

from sgdtime import cli, harness
from sgdtime.cli import GAP_SCENARIOS, SWEEP_SCENARIOS, bundled_spec, main
from sgdtime.harness import GapStudy


@pytest.fixture
def spec_file(tmp_path):
    path = tmp_path / "spec.json"
    path.write_text(json.dumps({
        "scenario": "toy", "workers": 3, "budget": 6.0,
        "problem": {"dim": 5, "reveal_prob": 0.5},
        "time_model": {"kind": "fixed", "shape": "custom",
                       "times": [1.0, 2.0, 5.0]},
        "algorithms": [
            {"name": "sync", "gammas": [0.1]},
            {"name": "msync", "gammas": [0.1], "groups": [1, 2]},
        ],
    }))
    return path


@pytest.fixture
def power_spec_file(tmp_path):
    path = tmp_path / "power.json"
    path.write_text(json.dumps({
        "scenario": "steady", "workers": 4, "budget": 50.0,
        "problem": {"dim": 5, "reveal_prob": 0.5},
        "time_model": {"kind": "power", "generator": "participation",
                       "horizon": 50.0,
                       "params": {"base_power": 2.0, "idle_fraction": 0.0,
                                  "interval": 1.0}},
        "algorithms": [{"name": "msync"}],
    }))
    return path


def test_sweep_emits_reports(spec_file, tmp_path, capsys):
    outdir = tmp_path / "out"
    assert main(["sweep", "--spec", str(spec_file), "--outdir", str(outdir)]) == 0
    names = {p.name for p in outdir.iterdir()}
    assert {"summary.json", "grid.csv", "manifest.json"} <= names
    out = capsys.readouterr().out
    assert "3 runs, 0 failures" in out
    assert "best msync" in out and "best sync" in out


def test_simulate_writes_trajectory(spec_file, tmp_path, capsys):
    out = tmp_path / "traj.csv"
    rc = main(["simulate", "--spec", str(spec_file), "--algorithm", "msync",
               "--gamma", "0.1", "--group", "2", "--out", str(out)])
    assert rc == 0
    assert out.exists() and out.with_suffix(".json").exists()
    summary = json.loads(capsys.readouterr().out)
    assert summary["algorithm"] == "msync"
    assert summary["final_time"] <= 6.0
    assert out.read_text().splitlines()[0] == "time,iter,f,grad_sq_norm"


def test_validation_failures_exit_one(spec_file, tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert main(["sweep", "--spec", str(missing)]) == 1
    assert str(missing) in capsys.readouterr().err

    bad = tmp_path / "bad.json"
    bad.write_text('{"scenario": 1}')
    assert main(["sweep", "--spec", str(bad)]) == 1
    err = capsys.readouterr().err
    assert "scenario" in err and "algorithms" in err

    assert main(["sweep", "--no-such-flag"]) == 1
    assert main(["gap", "--spec", str(spec_file)]) == 1
    assert "power-profile" in capsys.readouterr().err
    assert main(["simulate", "--spec", str(spec_file), "--algorithm", "msync",
                 "--gamma", "0.1"]) == 1
    assert main(["simulate", "--spec", str(spec_file), "--algorithm", "sync",
                 "--gamma", "0.1", "--group", "2"]) == 1


def test_sweep_with_all_runs_failing_exits_two(spec_file, monkeypatch, tmp_path,
                                               capsys):
    def explode(problem, model, config):
        raise RuntimeError("no progress")

    monkeypatch.setattr(harness, "run", explode)
    rc = main(["sweep", "--spec", str(spec_file), "--outdir", str(tmp_path / "o")])
    assert rc == 2
    captured = capsys.readouterr()
    assert "every run failed" in captured.err
    assert "3 failures" in captured.out
    # the failed grid is still emitted for inspection
    grid = (tmp_path / "o" / "grid.csv").read_text().splitlines()
    assert len(grid) == 4 and all("no progress" in line for line in grid[1:])


def test_gap_writes_table_and_reports_best(power_spec_file, tmp_path, capsys):
    outdir = tmp_path / "gap"
    rc = main(["gap", "--spec", str(power_spec_file), "--noise", "1.0",
               "--outdir", str(outdir)])
    assert rc == 0
    assert (outdir / "gap.csv").exists() and (outdir / "gap.json").exists()
    assert "min ratio" in capsys.readouterr().out


def test_gap_with_every_cell_stalled_exits_two(power_spec_file, monkeypatch,
                                               capsys):
    stalled = GapStudy(rows=({"noise_ratio": 1.0, "group_size": 1,
                              "t_lower": 1.0, "t_upper": None, "ratio": None,
                              "error": "StallError: dead"},), best={})
    monkeypatch.setattr(cli, "run_gap_study", lambda *a, **k: stalled)
    assert main(["gap", "--spec", str(power_spec_file), "--noise", "1.0"]) == 2
    assert "stalled" in capsys.readouterr().out


def test_estimate_r_from_distribution_and_file(tmp_path, capsys):
    rc = main(["estimate-r", "--distribution", "exponential",
               "--param", "rate=1.0", "--count", "5000", "--seed", "7"])
    assert rc == 0
    assert 0.3 <= float(capsys.readouterr().out) <= 3.0

    samples = tmp_path / "delays.txt"
    samples.write_text("\n".join(["1.0", "2.0", "4.0", "8.0"]))
    assert main(["estimate-r", "--samples", str(samples)]) == 0
    assert float(capsys.readouterr().out) > 0.0

    empty = tmp_path / "empty.txt"
    empty.write_text("")
    assert main(["estimate-r", "--samples", str(empty)]) == 1
    assert main(["estimate-r", "--distribution", "exponential",
                 "--param", "rate"]) == 1
    assert main(["estimate-r", "--distribution", "exponential",
                 "--param", "rte=1.0", "--count", "10"]) == 1


def test_analyze_prints_report_json(capsys, tmp_path):
    rc = main(["analyze", "--times", "1,2,3,4", "--noise-ratio", "4"])
    assert rc == 0
    body = json.loads(capsys.readouterr().out)
    assert body["sync_seconds"] == 64.0
    assert body["worker_times"] == [1.0, 2.0, 3.0, 4.0]

    out = tmp_path / "report.json"
    rc = main(["analyze", "--times", "1,2", "--noise-ratio", "1",
               "--speed", "2.0", "--idle-fraction", "0.3", "--out", str(out)])
    assert rc == 0
    body = json.loads(out.read_text())
    assert body["participation_seconds"] == 32.0

    assert main(["analyze", "--times", "1,2", "--speed", "2.0"]) == 1
    assert main(["analyze", "--times", ""]) == 1


def test_bundled_scenarios_cover_desk_and_full_scale():
    for name in SWEEP_SCENARIOS:
        desk = bundled_spec(name)
        assert desk.workers == 100 and desk.dim == 200
        assert {p.name for p in desk.algorithms} == {"sync", "msync", "async",
                                                     "rennala"}
        full = bundled_spec(name, full=True)
        assert full.workers == 1000 and full.dim == 1000
    for name in GAP_SCENARIOS:
        spec = bundled_spec(name)
        assert spec.workers == 50
        assert spec.time_model["kind"] == "power"
    with pytest.raises(ValueError, match="unknown scenario"):
        bundled_spec("warp-drive")


def test_simulate_bundled_scenario_runs_quickly(tmp_path, capsys):
    out = tmp_path / "run.csv"
    rc = main(["simulate", "--scenario", "sqrt-fixed", "--algorithm", "async",
               "--gamma", "0.01", "--budget", "15.0", "--out", str(out)])
    assert rc == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["scenario"] == "sqrt-fixed"
    assert 0.0 < summary["final_time"] <= 15.0
