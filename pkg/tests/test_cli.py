import json
from dataclasses import replace

import numpy as np
import polars as pl
import pytest

from config.experiment import (
    ExperimentConfig,
    TraceConfig,
    dump_config,
    from_dict,
    load_config,
    required_days,
)
from errors import ConfigError, ReportError
from main import cmd_eval_dynamics, cmd_report, cmd_run, cmd_simulate, main
from report.compare import RunComparer

from conftest import tiny_experiment


def _daily_metrics(run_dir, power, tvr=None):
    run_dir.mkdir(parents=True, exist_ok=True)
    pl.DataFrame(
        {
            "day": list(range(len(power))),
            "avg_power_w": [float(p) for p in power],
            "tvr": tvr or [0.0] * len(power),
        }
    ).write_csv(run_dir / "daily_metrics.csv")
    return run_dir


def test_config_round_trip(tmp_path):
    cfg = replace(tiny_experiment(), traces=TraceConfig(weather_preset="hot", days=6))
    path = tmp_path / "config.json"
    dump_config(cfg, path)
    assert load_config(path) == cfg


def test_partial_config_keeps_defaults():
    cfg = from_dict({"plan": {"horizon": 3}, "seed": 7})
    assert cfg.plan.horizon == 3
    assert cfg.plan.samples == ExperimentConfig().plan.samples
    assert cfg.seed == 7


def test_unknown_keys_are_rejected():
    with pytest.raises(ConfigError):
        from_dict({"planner": {}})
    with pytest.raises(ConfigError):
        from_dict({"plan": {"horizn": 3}})


def test_missing_trace_file_names_the_path(tmp_path):
    missing = str(tmp_path / "weather.csv")
    with pytest.raises(ConfigError) as excinfo:
        from_dict({"traces": {"weather_path": missing}})
    assert excinfo.value.path == missing
    assert missing in str(excinfo.value)


def test_invalid_json_reports_the_line(tmp_path):
    path = tmp_path / "config.json"
    path.write_text('{\n  "seed": 1,\n  oops\n}\n')
    with pytest.raises(ConfigError, match="line 3"):
        load_config(path)


def test_required_days_covers_the_run():
    cfg = tiny_experiment()
    # 150 warm-up + 192 on-policy steps is 3.56 days, plus a spare
    assert required_days(cfg) == 5


def test_simulate_writes_one_day(tmp_path):
    cfg = tiny_experiment()
    report = cmd_simulate(cfg, tmp_path / "a", "default", 1)
    log = pl.read_csv(tmp_path / "a" / "episode_log.csv")
    assert log.height == 96
    assert report.days == 1
    assert (tmp_path / "a" / "config.json").exists()

    again = cmd_simulate(cfg, tmp_path / "b", "default", 1)
    assert again.episode_log.equals(report.episode_log)


def test_simulate_replays_scripted_actions(tmp_path):
    actions = tmp_path / "actions.csv"
    pl.DataFrame(
        {"TS_west": [20.0], "TS_east": [21.0], "F_west": [5.0], "F_east": [7.0]}
    ).write_csv(actions)
    report = cmd_simulate(
        tiny_experiment(), tmp_path / "out", "scripted", 1, str(actions)
    )
    last = report.episode_log.select("TS_west", "TS_east", "F_west", "F_east").row(-1)
    assert last == (20.0, 21.0, 5.0, 7.0)


def test_main_runs_a_simulation(tmp_path):
    config = tmp_path / "config.json"
    dump_config(tiny_experiment(), config)
    out = tmp_path / "out"
    argv = ["--config", str(config), "--out", str(out), "simulate"]
    code = main([*argv, "--days", "1"])
    assert code == 0
    assert pl.read_csv(out / "daily_metrics.csv").height == 1


def test_main_reports_errors_with_exit_code(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    code = main(["--config", str(missing), "simulate"])
    assert code == 2
    assert "error: config file not found" in capsys.readouterr().err


def test_report_against_itself_is_zero(tmp_path):
    run = _daily_metrics(tmp_path / "run", [100.0, 200.0])
    summary = cmd_report([str(run)], tmp_path / "report")
    assert summary["power_reduction_pct"].to_list() == [0.0]
    assert (tmp_path / "report" / "comparison_summary.csv").exists()


def test_report_power_reduction(tmp_path):
    base = _daily_metrics(tmp_path / "base", [100.0, 200.0])
    agent = _daily_metrics(tmp_path / "agent", [90.0, 150.0], tvr=[0.1, 0.3])
    summary = cmd_report([str(agent)], tmp_path / "report", baseline=str(base))
    rows = {row["run"]: row for row in summary.iter_rows(named=True)}
    assert rows["agent"]["power_reduction_pct"] == pytest.approx(20.0)
    assert rows["agent"]["mean_tvr"] == pytest.approx(0.2)
    assert rows["agent"]["energy_kwh"] == pytest.approx(240.0 * 24 / 1000)
    assert rows["base"]["power_reduction_pct"] == pytest.approx(0.0)


def test_report_aligns_days(tmp_path):
    a = _daily_metrics(tmp_path / "a", [1.0, 2.0, 3.0])
    b = _daily_metrics(tmp_path / "b", [3.0, 2.0, 1.0])
    daily = RunComparer().compare([a, b]).daily
    assert daily.columns == ["day", "a_tvr", "a_power_w", "b_tvr", "b_power_w"]
    assert daily["b_power_w"].to_list() == [3.0, 2.0, 1.0]


def test_report_rejects_mismatched_days(tmp_path):
    a = _daily_metrics(tmp_path / "a", [1.0, 2.0])
    b = _daily_metrics(tmp_path / "b", [1.0, 2.0, 3.0])
    with pytest.raises(ReportError):
        cmd_report([str(a), str(b)], tmp_path / "report")


def test_report_needs_finished_runs(tmp_path):
    with pytest.raises(ReportError):
        cmd_report([str(tmp_path / "missing")], tmp_path / "report")


def test_eval_dynamics_table(tmp_path):
    table = cmd_eval_dynamics(
        tiny_experiment(),
        tmp_path,
        windows=[2, 4],
        horizon=8,
        starts=3,
        presets=["mild"],
        eval_days=1,
    )
    assert table.columns == ["condition", "W2", "W2_coverage", "W4", "W4_coverage"]
    assert table["condition"].to_list() == ["mild"]
    assert table["W4_coverage"][0] == 1.0
    assert np.isfinite(table["W2"][0]) and table["W2"][0] >= 0.0

    reread = pl.read_csv(tmp_path / "deviation_table.csv")
    np.testing.assert_allclose(
        reread.select("W2", "W4").to_numpy(), table.select("W2", "W4").to_numpy()
    )


def test_eval_dynamics_needs_enough_training_steps(tmp_path):
    with pytest.raises(ConfigError):
        cmd_eval_dynamics(tiny_experiment(), tmp_path, windows=[200])


def test_run_and_report_against_a_baseline(tmp_path):
    cfg = tiny_experiment(total_rounds=1)
    baseline = cmd_run(cfg, tmp_path / "baseline", "baseline-fixed")
    agent = cmd_run(cfg, tmp_path / "mpc", "mpc")
    assert baseline.days == agent.days == 1
    for name in ("daily_metrics.csv", "summary.csv", "episode_log.csv", "config.json"):
        assert (tmp_path / "mpc" / name).exists()
    assert (tmp_path / "mpc" / "rounds.csv").exists()
    assert not (tmp_path / "mpc" / "checkpoint").exists()
    assert json.loads((tmp_path / "mpc" / "config.json").read_text())["loop"][
        "mode"
    ] == "mpc"

    summary = cmd_report(
        [str(tmp_path / "mpc")],
        tmp_path / "report",
        baseline=str(tmp_path / "baseline"),
    )
    assert summary["run"].to_list() == ["mpc", "baseline"]
    assert summary["days"].to_list() == [1, 1]
