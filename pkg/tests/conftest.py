import numpy as np
import polars as pl
import pytest

from agent.loop import AgentConfig, LoopConfig
from config.experiment import ExperimentConfig, TraceConfig
from dynamics.model import ModelConfig
from imitation.policy import PolicyConfig
from mpc.action_space import SafeActionSpace
from mpc.planner import PlanConfig
from plant.environment import TwoZoneDataCenter
from plant.signals import ACT_FIELDS
from plant.thermal_zone import PlantParams
from plant.traces import gen_ite_load, gen_weather


def make_env(
    days: int = 2,
    seed: int = 0,
    preset: str = "mild",
    params: PlantParams = PlantParams(),
) -> TwoZoneDataCenter:
    weather = gen_weather(days, np.random.default_rng(seed), preset)
    ite = gen_ite_load(days, 16_000.0, np.random.default_rng(seed + 1))
    return TwoZoneDataCenter(weather, ite, params=params)


def tiny_agent_config(**loop_overrides) -> AgentConfig:
    loop = dict(
        initial_collect_steps=150,
        on_policy_steps=96,
        epochs=2,
        total_rounds=2,
        capacity=1000,
        deviation_horizon=8,
        deviation_starts=3,
    )
    loop.update(loop_overrides)
    return AgentConfig(
        loop=LoopConfig(**loop),
        model=ModelConfig(window=4, hidden_size=8, batch_size=64, clock_period=96),
        plan=PlanConfig(horizon=2, samples=64, chunk_size=32),
        imitation=PolicyConfig(window=4, hidden_size=8, batch_size=64),
        seed=3,
    )


def tiny_experiment(**loop_overrides) -> ExperimentConfig:
    agent = tiny_agent_config(**loop_overrides)
    return ExperimentConfig(
        traces=TraceConfig(),
        model=agent.model,
        plan=agent.plan,
        loop=agent.loop,
        imitation=agent.imitation,
        seed=agent.seed,
    )


@pytest.fixture
def env() -> TwoZoneDataCenter:
    return make_env()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def numeric_gradient(f, theta: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function of a flat parameter vector."""
    grad = np.zeros_like(theta)
    for i in range(len(theta)):
        bumped = theta.copy()
        bumped[i] += eps
        up = f(bumped)
        bumped[i] -= 2 * eps
        grad[i] = (up - f(bumped)) / (2 * eps)
    return grad


def assert_gradients_match(analytic: np.ndarray, numeric: np.ndarray) -> None:
    scale = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-5)
    worst = np.max(np.abs(analytic - numeric) / scale)
    assert worst <= 1e-4, f"relative gradient error {worst:.2e}"


def assert_safe_actions(log: pl.DataFrame) -> None:
    space = SafeActionSpace()
    actions = log.select(ACT_FIELDS).to_numpy()
    assert space.contains(actions[0])
    for prev, action in zip(actions[:-1], actions[1:]):
        assert space.is_safe_transition(prev, action)
