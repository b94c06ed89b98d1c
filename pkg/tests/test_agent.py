from dataclasses import replace

import numpy as np
import polars as pl
import pytest

from agent.checkpoint import RunState, save_checkpoint, spawn_rngs
from agent.loop import (
    collect_initial,
    fixed_action,
    recent_history,
    run_baseline,
    run_fingerprint,
    run_mbrl,
    run_mbrl_imitation,
    simulate,
)
from agent.metrics import (
    MetricsReport,
    daily_avg_power,
    daily_tvr,
    episode_log_frame,
)
from errors import CheckpointError, TraceExhaustedError
from experience.buffer import ExperienceBuffer, TrajectoryStep
from mpc.action_space import SafeActionSpace
from mpc.reward import RewardParams
from plant.signals import ACT_FIELDS, OBS_FIELDS
from plant.thermal_zone import PlantParams

from conftest import assert_safe_actions, make_env, tiny_agent_config

SPACE = SafeActionSpace()


def _log_rows(n: int, T_west=23.5, T_east=23.5, P_ite=10_000.0, P_hvac=0.0):
    rows = []
    for i in range(n):
        obs = dict(
            T_out=15.0,
            T_west=T_west[i] if isinstance(T_west, list) else T_west,
            T_east=T_east[i] if isinstance(T_east, list) else T_east,
            P_ite=P_ite,
            P_hvac=P_hvac,
        )
        row = {"step": i, **obs}
        row.update(zip(ACT_FIELDS, (23.5, 23.5, 6.25, 6.25)))
        row.update(reward=0.0, violation_west=False, violation_east=False)
        rows.append(row)
    return rows


def test_collect_initial_records_every_step():
    env = make_env(days=2)
    buffer = collect_initial(env, 100, SPACE, np.random.default_rng(0))
    assert len(buffer) == 100
    snap = buffer.snapshot()
    np.testing.assert_array_equal(snap.step, np.arange(100))
    assert all(SPACE.contains(a) for a in snap.act)
    assert env.interval == 100


def test_collect_initial_with_no_steps():
    assert len(collect_initial(make_env(days=1), 0)) == 0


def test_collect_initial_refuses_short_traces():
    env = make_env(days=1)
    with pytest.raises(TraceExhaustedError):
        collect_initial(env, 200)
    assert env.interval == 0


def test_recent_history_pads_short_buffers():
    buffer = ExperienceBuffer(capacity=10)
    for i in range(2):
        buffer.append(TrajectoryStep(np.full(5, float(i)), np.full(4, float(i)), 0, i))
    history = recent_history(buffer, np.full(5, 9.0), np.full(4, 7.0), 5, step=2)
    np.testing.assert_array_equal(history.obs[:, 0], [0.0, 0.0, 0.0, 1.0, 9.0])
    np.testing.assert_array_equal(history.act[:, 0], [0.0, 0.0, 0.0, 1.0])
    assert history.step == 2


def test_recent_history_uses_filler_without_actions():
    history = recent_history(ExperienceBuffer(4), np.ones(5), np.full(4, 7.0), 3)
    assert history.obs.shape == (3, 5)
    np.testing.assert_array_equal(history.act, np.full((2, 4), 7.0))


def test_daily_tvr_examples():
    params = RewardParams()
    assert daily_tvr(episode_log_frame(_log_rows(96)), params).tolist() == [0.0]

    hot = [26.0] * 24 + [23.5] * 72
    log = episode_log_frame(_log_rows(96, T_west=hot))
    assert daily_tvr(log, params).tolist() == [0.25]

    both = episode_log_frame(_log_rows(96, T_west=hot, T_east=hot))
    assert daily_tvr(both, params).tolist() == [0.25]


def test_partial_days_are_excluded():
    log = episode_log_frame(_log_rows(100))
    assert len(daily_tvr(log, RewardParams())) == 1
    assert len(daily_avg_power(log)) == 1


def test_daily_power_examples():
    log = episode_log_frame(_log_rows(192, P_ite=100_000.0))
    np.testing.assert_array_equal(daily_avg_power(log), [100_000.0, 100_000.0])

    mixed = episode_log_frame(_log_rows(96, P_ite=8_000.0, P_hvac=2_000.0))
    doubled = episode_log_frame(_log_rows(96, P_ite=16_000.0, P_hvac=4_000.0))
    assert daily_avg_power(doubled)[0] == pytest.approx(2 * daily_avg_power(mixed)[0])


def test_empty_log_has_no_days():
    report = MetricsReport.from_log("mpc", episode_log_frame([]), RewardParams())
    assert report.days == 0
    assert report.cumulative_reward == 0.0
    assert report.daily_frame().height == 0


def test_fixed_baseline_is_constant_and_reproducible():
    cfg = tiny_agent_config()
    reports = [
        run_baseline(make_env(days=5), "fixed-setpoint", cfg) for _ in range(2)
    ]
    log = reports[0].episode_log
    assert reports[0].days == 2
    assert log.height == cfg.loop.on_policy_total
    anchor = fixed_action(cfg.action_space, cfg.reward).to_array()
    np.testing.assert_array_equal(
        log.select(ACT_FIELDS).to_numpy(), np.tile(anchor, (log.height, 1))
    )
    assert log.equals(reports[1].episode_log)


def test_default_baseline_stays_safe():
    report = run_baseline(make_env(days=5), "default-perturbed", tiny_agent_config())
    assert_safe_actions(report.episode_log)
    assert report.summary_frame()["mode"][0] == "baseline-default"


def test_simulate_scripted_targets_are_rate_limited():
    env = make_env(days=1)
    targets = np.array([[13.5, 23.5, 10.0, 2.5]])
    report = simulate(env, tiny_agent_config(), "scripted", 12, targets)
    actions = report.episode_log.select(ACT_FIELDS).to_numpy()
    np.testing.assert_array_equal(actions[0], [22.5, 23.5, 7.25, 5.25])
    np.testing.assert_array_equal(actions[-1], targets[0])
    assert_safe_actions(report.episode_log)


def test_mbrl_round_trip():
    cfg = tiny_agent_config()
    report = run_mbrl(make_env(days=5), cfg)
    log = report.episode_log
    assert report.mode == "mpc"
    assert log.height == 192
    assert report.days == 2
    assert report.plan_log.height == 192
    assert report.rounds["env_steps"].to_list() == [246, 342]
    assert len(report.round_deviation) == 2
    assert report.cumulative_reward == pytest.approx(log["reward"].sum())
    assert list(log.columns[1:6]) == list(OBS_FIELDS)
    assert_safe_actions(log)


def test_buffer_never_exceeds_capacity():
    cfg = tiny_agent_config(capacity=200)
    env = make_env(days=5)
    buffer = collect_initial(
        env,
        150,
        cfg.action_space,
        np.random.default_rng(0),
        capacity=200,
        anchor=fixed_action(cfg.action_space, cfg.reward),
    )
    run_mbrl(env, cfg, buffer=buffer)
    assert len(buffer) == 200
    assert buffer.snapshot().step[-1] == 341


def test_mbrl_is_reproducible():
    cfg = tiny_agent_config(total_rounds=1)
    a = run_mbrl(make_env(days=5), cfg).episode_log
    b = run_mbrl(make_env(days=5), cfg).episode_log
    assert a.equals(b)


def test_no_rounds_gives_an_empty_report():
    report = run_mbrl(make_env(days=3), tiny_agent_config(total_rounds=0))
    assert report.days == 0
    assert report.episode_log.height == 0


def test_short_traces_fail_before_running():
    env = make_env(days=2)
    with pytest.raises(TraceExhaustedError):
        run_mbrl(env, tiny_agent_config())
    assert env.interval == 0


class _StopAfterFirstRound:
    def __call__(self, round_index: int) -> None:
        if round_index == 0:
            raise KeyboardInterrupt


def test_resume_matches_an_uninterrupted_run(tmp_path):
    cfg = tiny_agent_config()
    straight = run_mbrl(make_env(days=5), cfg)

    checkpoint = tmp_path / "checkpoint"
    with pytest.raises(KeyboardInterrupt):
        run_mbrl(
            make_env(days=5),
            cfg,
            checkpoint_dir=checkpoint,
            on_round_end=_StopAfterFirstRound(),
        )
    assert (checkpoint / "state.json").exists()

    resumed = run_mbrl(make_env(days=5), cfg, checkpoint_dir=checkpoint)
    assert resumed.episode_log.equals(straight.episode_log)
    assert not checkpoint.exists()


def test_resume_refuses_another_configuration(tmp_path):
    cfg = tiny_agent_config()
    checkpoint = tmp_path / "checkpoint"
    with pytest.raises(KeyboardInterrupt):
        run_mbrl(
            make_env(days=5),
            cfg,
            checkpoint_dir=checkpoint,
            on_round_end=_StopAfterFirstRound(),
        )
    with pytest.raises(CheckpointError):
        run_mbrl(make_env(days=5), replace(cfg, seed=4), checkpoint_dir=checkpoint)


@pytest.mark.parametrize(
    "changed",
    [
        dict(params=PlantParams(k_fan=2.0e-6)),
        dict(preset="hot"),
        dict(seed=1),
    ],
)
def test_resume_refuses_another_plant_or_trace(tmp_path, changed):
    cfg = tiny_agent_config()
    checkpoint = tmp_path / "checkpoint"
    with pytest.raises(KeyboardInterrupt):
        run_mbrl(
            make_env(days=5),
            cfg,
            checkpoint_dir=checkpoint,
            on_round_end=_StopAfterFirstRound(),
        )
    with pytest.raises(CheckpointError):
        run_mbrl(make_env(days=5, **changed), cfg, checkpoint_dir=checkpoint)
    assert (checkpoint / "state.json").exists()


def test_failed_checkpoint_write_is_not_reported_as_saved(
    tmp_path, monkeypatch, caplog
):
    def full_disk(self, path):
        raise OSError("no space left on device")

    monkeypatch.setattr(ExperienceBuffer, "save", full_disk)
    checkpoint = tmp_path / "checkpoint"
    with pytest.raises(KeyboardInterrupt):
        run_mbrl(
            make_env(days=5),
            tiny_agent_config(),
            checkpoint_dir=checkpoint,
            on_round_end=_StopAfterFirstRound(),
        )
    assert not (checkpoint / "state.json").exists()
    assert "could not be saved" in caplog.text
    assert "Progress saved" not in caplog.text


def test_save_checkpoint_reports_success(tmp_path):
    buffer = ExperienceBuffer(4)
    buffer.append(TrajectoryStep(np.full(5, 20.0), np.full(4, 6.0), 0, 0))
    state = RunState(buffer, spawn_rngs(0, ("plan",)))
    assert save_checkpoint(tmp_path / "ok", state, {}, "abc")
    blocked = tmp_path / "blocked"
    blocked.write_text("not a directory")
    assert not save_checkpoint(blocked, state, {}, "abc")


def test_oracle_planning_skips_model_fitting():
    oracle = run_mbrl(make_env(days=5), tiny_agent_config(), oracle=True)
    assert oracle.mode == "mpc-oracle"
    assert oracle.episode_log.height == 192
    assert oracle.rounds["train_loss"].null_count() == 2
    assert oracle.round_deviation == [None, None]
    assert_safe_actions(oracle.episode_log)


def test_imitation_starts_by_holding_the_action():
    cfg = tiny_agent_config()
    report = run_mbrl_imitation(make_env(days=5), cfg)
    actions = report.episode_log.select(ACT_FIELDS).to_numpy()
    first_round = actions[: cfg.loop.on_policy_steps]
    assert np.all(first_round == first_round[0])
    assert len(report.agreement_mse) == 2
    assert report.plan_log.height == 192
    assert_safe_actions(report.episode_log)


def test_imitation_resumes_exactly(tmp_path):
    cfg = tiny_agent_config()
    straight = run_mbrl_imitation(make_env(days=5), cfg)
    checkpoint = tmp_path / "checkpoint"
    with pytest.raises(KeyboardInterrupt):
        run_mbrl_imitation(
            make_env(days=5),
            cfg,
            checkpoint_dir=checkpoint,
            on_round_end=_StopAfterFirstRound(),
        )
    resumed = run_mbrl_imitation(make_env(days=5), cfg, checkpoint_dir=checkpoint)
    assert resumed.episode_log.equals(straight.episode_log)


def test_metrics_recompute_from_the_written_log(tmp_path):
    cfg = tiny_agent_config()
    report = run_baseline(make_env(days=5), "default-perturbed", cfg)
    path = tmp_path / "episode_log.csv"
    report.episode_log.write_csv(path)
    log = pl.read_csv(path)
    np.testing.assert_allclose(daily_avg_power(log), report.daily_power, rtol=1e-12)
    np.testing.assert_array_equal(daily_tvr(log, cfg.reward), report.daily_tvr)


def test_fingerprint_tracks_the_configuration():
    cfg = tiny_agent_config()
    assert cfg.fingerprint() == tiny_agent_config().fingerprint()
    assert cfg.fingerprint() != replace(cfg, seed=99).fingerprint()

    env = make_env(days=2)
    assert run_fingerprint(env, cfg) == run_fingerprint(make_env(days=2), cfg)
    for other in (make_env(days=2, preset="cold"), make_env(days=3)):
        assert run_fingerprint(other, cfg) != run_fingerprint(env, cfg)
