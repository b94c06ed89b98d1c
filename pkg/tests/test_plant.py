import numpy as np
import pytest

from errors import IntegrationError, TraceExhaustedError, TraceParseError
from errors import TraceValidationError
from plant.environment import DEFAULT_ACTION, TwoZoneDataCenter
from plant.signals import Observation, RawAction
from plant.thermal_zone import (
    ControlInput,
    Exogenous,
    PlantParams,
    PlantState,
    SimConfig,
    derivatives,
    hvac_power,
    local_loop,
    step_single_zone,
    zone_exogenous,
)
from plant.traces import Trace, gen_ite_load, gen_weather, load_trace

from conftest import make_env

PARAMS = PlantParams()


def _still_exo(T_o: float = 20.0) -> Exogenous:
    return Exogenous(T_o=T_o, W_o=PARAMS.W_s, Q_o=0.0, M_o=0.0)


def test_single_euler_step_by_hand():
    # f / V_s = 0.1 with every other term of the space balance at zero
    state = PlantState(T_2=20.0, T_3=25.0, W_3=PARAMS.W_s)
    control = ControlInput(f=0.1 * PARAMS.V_s, gpm=0.0)
    new = step_single_zone(state, control, _still_exo(), PARAMS, dt=1.0)
    assert new.T_3 == pytest.approx(24.5, abs=1e-12)


def test_zero_dt_returns_state_unchanged():
    state = PlantState(T_2=14.0, T_3=26.0, W_3=0.01)
    control = ControlInput(f=1500.0, gpm=0.2)
    assert step_single_zone(state, control, _still_exo(), PARAMS, 0.0) == state


def test_negative_dt_is_rejected():
    state = PlantState(T_2=14.0, T_3=26.0, W_3=0.01)
    with pytest.raises(ValueError):
        step_single_zone(state, ControlInput(1500.0, 0.0), _still_exo(), PARAMS, -1.0)


def test_matched_terms_give_zero_derivatives():
    state = PlantState(T_2=24.0, T_3=24.0, W_3=PARAMS.W_s)
    rates = derivatives(
        state, ControlInput(f=1500.0, gpm=0.0), _still_exo(T_o=24.0), PARAMS
    )
    assert all(r == 0.0 for r in rates)


def test_non_finite_derivative_names_component():
    state = PlantState(T_2=np.nan, T_3=24.0, W_3=PARAMS.W_s)
    with pytest.raises(IntegrationError) as info:
        step_single_zone(state, ControlInput(1500.0, 0.0), _still_exo(), PARAMS, 1.0)
    assert info.value.component == "T_2"


def test_hvac_power_examples():
    cubic = PlantParams(k_fan=1.0, k_chill=0.0)
    assert hvac_power(ControlInput(f=2.0, gpm=0.0), cubic) == pytest.approx(8.0)
    assert hvac_power(ControlInput(f=0.0, gpm=0.0), PARAMS) == 0.0
    single = hvac_power(ControlInput(f=1000.0, gpm=0.0), PARAMS)
    double = hvac_power(ControlInput(f=2000.0, gpm=0.0), PARAMS)
    assert double == pytest.approx(8.0 * single, rel=1e-12)


def test_local_loop_clips_chilled_water():
    below = local_loop(23.5, 6.0, 22.0, PARAMS)
    above = local_loop(23.5, 6.0, 40.0, PARAMS)
    assert below.gpm == 0.0
    assert above.gpm == PARAMS.gpm_max
    assert below.f == pytest.approx(PARAMS.flow_per_unit * 6.0)


def test_rk4_agrees_with_euler_for_small_steps():
    state = PlantState(T_2=16.0, T_3=25.0, W_3=PARAMS.W_s)
    control = ControlInput(f=1500.0, gpm=0.1)
    exo = zone_exogenous(18.0, 0.007, 8000.0, PARAMS)
    euler = step_single_zone(state, control, exo, PARAMS, 1e-3, "euler")
    rk4 = step_single_zone(state, control, exo, PARAMS, 1e-3, "rk4")
    assert rk4.T_3 == pytest.approx(euler.T_3, abs=1e-6)


def test_identical_zones_stay_identical(env):
    action = RawAction(22.0, 22.0, 7.0, 7.0)
    for _ in range(10):
        obs = env.step(action).observation
        assert obs.T_west == obs.T_east


def test_interval_averages_its_sub_steps():
    env = make_env(days=1)
    action = RawAction(22.5, 23.0, 6.0, 8.0)
    T_o, W_o, ite = env.segment(0)
    zone = env.initial_state
    temps = []
    for i in range(env.sim.substeps):
        control = local_loop(action.TS_west, action.F_west, zone.T_3, env.params)
        exo = zone_exogenous(T_o[i], W_o[i], ite[i], env.params)
        zone = step_single_zone(zone, control, exo, env.params, env.sim.dt)
        temps.append(zone.T_3)

    obs = env.step(action).observation
    assert obs.T_west == pytest.approx(np.mean(temps), rel=1e-12)
    assert obs.P_ite == pytest.approx(np.mean(ite[: env.sim.substeps]), rel=1e-12)


def test_episode_ends_when_traces_run_out():
    env = make_env(days=1)
    assert env.n_intervals == 96
    for _ in range(95):
        assert not env.step(DEFAULT_ACTION).done
    assert env.step(DEFAULT_ACTION).done
    with pytest.raises(TraceExhaustedError):
        env.step(DEFAULT_ACTION)


def test_state_dict_restores_trajectory(env):
    action = RawAction(22.0, 23.0, 5.0, 7.5)
    for _ in range(5):
        env.step(action)
    saved = env.state_dict()
    first = [env.step(action).observation for _ in range(5)]
    env.load_state_dict(saved)
    second = [env.step(action).observation for _ in range(5)]
    assert first == second


def test_step_reports_reward_breakdown(env):
    result = env.step(DEFAULT_ACTION)
    assert isinstance(result.observation, Observation)
    assert set(result.info) == {"violation_west", "violation_east", "r_T", "r_P"}
    assert result.info["r_P"] == pytest.approx(-result.observation.P_total)


def test_constant_inputs_reach_a_fixed_point():
    n = 400 * 15
    minutes = np.arange(float(n))
    weather = Trace(
        minutes,
        {"T_o_C": np.full(n, 15.0), "W_o": np.full(n, 0.007)},
        label="weather",
    )
    ite = Trace(minutes, {"watts": np.full(n, 8000.0)}, label="ite-load")
    env = TwoZoneDataCenter(weather, ite)
    previous = env.observation.to_array()
    for _ in range(env.n_intervals):
        current = env.step(DEFAULT_ACTION).observation.to_array()
        change = np.max(np.abs(current - previous))
        previous = current
    assert change < 1e-6


def test_halving_dt_barely_moves_a_day():
    weather = gen_weather(2, np.random.default_rng(0))
    ite = gen_ite_load(2, 16_000.0, np.random.default_rng(1))
    coarse = TwoZoneDataCenter(weather, ite, sim=SimConfig(dt=1.0))
    fine = TwoZoneDataCenter(weather, ite, sim=SimConfig(dt=0.5))
    for _ in range(96):
        a = coarse.step(DEFAULT_ACTION).observation
        b = fine.step(DEFAULT_ACTION).observation
    assert abs(a.T_west - b.T_west) < 0.05


def test_ite_schedule_amplitudes():
    trace = gen_ite_load(1, 10_000.0, rng_seed=0, noise=0.0)
    watts = trace.column("watts")
    assert watts[12 * 60] == pytest.approx(10_000.0)
    assert watts[3 * 60] == pytest.approx(5_000.0)
    assert watts[7 * 60] == pytest.approx(7_500.0)
    assert watts[19 * 60] == pytest.approx(8_000.0)


def test_ite_noise_is_bounded_and_seeded():
    a = gen_ite_load(2, 10_000.0, rng_seed=5, noise=0.05)
    b = gen_ite_load(2, 10_000.0, rng_seed=5, noise=0.05)
    np.testing.assert_array_equal(a.column("watts"), b.column("watts"))
    clean = gen_ite_load(2, 10_000.0, rng_seed=5, noise=0.0).column("watts")
    ratio = a.column("watts") / clean
    assert np.all(np.abs(ratio - 1.0) <= 0.05 + 1e-12)


def test_weather_presets_differ():
    mild = gen_weather(1, 0, "mild").column("T_o_C")
    hot = gen_weather(1, 0, "hot").column("T_o_C")
    assert hot.mean() > mild.mean()
    with pytest.raises(TraceValidationError):
        gen_weather(1, 0, "arctic")


def test_load_trace_reads_columns(tmp_path):
    path = tmp_path / "weather.csv"
    path.write_text("minute,T_o_C,W_o\n0,10.5,0.007\n1,11.0,0.007\n2,11.5,0.008\n")
    trace = load_trace(path)
    assert trace.label == "weather"
    assert trace.dt == 1.0
    np.testing.assert_array_equal(trace.column("T_o_C"), [10.5, 11.0, 11.5])


def test_load_trace_missing_column(tmp_path):
    path = tmp_path / "weather.csv"
    path.write_text("minute,T_o_C\n0,10\n1,11\n")
    with pytest.raises(TraceParseError) as info:
        load_trace(path, label="weather")
    assert info.value.column == "W_o"


def test_load_trace_malformed_value_reports_line(tmp_path):
    path = tmp_path / "weather.csv"
    path.write_text("minute,T_o_C,W_o\n0,10,0.007\n1,abc,0.007\n")
    with pytest.raises(TraceParseError) as info:
        load_trace(path)
    assert info.value.line == 3
    assert info.value.column == "T_o_C"


def test_load_trace_empty_file(tmp_path):
    path = tmp_path / "load.csv"
    path.write_text("")
    with pytest.raises(TraceValidationError):
        load_trace(path, label="ite-load")


def test_load_trace_single_row_needs_dt(tmp_path):
    path = tmp_path / "load.csv"
    path.write_text("minute,watts\n0,9000\n")
    with pytest.raises(TraceValidationError):
        load_trace(path)
    trace = load_trace(path, dt=1.0)
    assert len(trace) == 1


def test_load_trace_rejects_unordered_minutes(tmp_path):
    path = tmp_path / "load.csv"
    path.write_text("minute,watts\n0,9000\n2,9000\n1,9000\n")
    with pytest.raises(TraceValidationError):
        load_trace(path)
