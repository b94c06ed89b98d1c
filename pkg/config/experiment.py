"""Experiment configuration: JSON sections loaded into frozen dataclasses."""

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from agent.loop import AgentConfig, LoopConfig, fixed_action
from agent.metrics import steps_per_day
from dynamics.model import ModelConfig
from errors import ConfigError
from imitation.policy import PolicyConfig
from logger.logger import get_logger
from mpc.action_space import SafeActionSpace
from mpc.planner import PlanConfig
from mpc.reward import RewardParams
from plant.environment import TwoZoneDataCenter
from plant.thermal_zone import PlantParams, SimConfig
from plant.traces import (
    WEATHER_PRESETS,
    Trace,
    gen_ite_load,
    gen_weather,
    load_trace,
)

logger = get_logger(__name__)

DEFAULT_PEAK_WATTS = 16_000.0


@dataclass(frozen=True)
class TraceConfig:
    """
    Trace files, or the synthetic generators used when a path is unset.
    `days` fixes the synthetic length; by default it covers the run.
    """

    weather_path: Optional[str] = None
    ite_path: Optional[str] = None
    weather_preset: str = "mild"
    peak_watts: float = DEFAULT_PEAK_WATTS
    ite_noise: float = 0.05
    days: Optional[int] = None

    def __post_init__(self) -> None:
        if self.weather_preset not in WEATHER_PRESETS:
            raise ConfigError(
                f"unknown weather preset {self.weather_preset!r}; "
                f"choose from {sorted(WEATHER_PRESETS)}"
            )
        if self.peak_watts <= 0 or self.ite_noise < 0:
            raise ConfigError("peak_watts must be positive, ite_noise >= 0")
        if self.days is not None and self.days < 1:
            raise ConfigError("trace days must be at least 1")


def _default_model() -> ModelConfig:
    """Model with a daily clock at the default control interval."""
    return ModelConfig(clock_period=steps_per_day(SimConfig().control_interval))


SECTIONS: dict[str, type] = {
    "plant": PlantParams,
    "simulation": SimConfig,
    "traces": TraceConfig,
    "model": ModelConfig,
    "plan": PlanConfig,
    "reward": RewardParams,
    "action_space": SafeActionSpace,
    "loop": LoopConfig,
    "imitation": PolicyConfig,
}


@dataclass(frozen=True)
class ExperimentConfig:
    plant: PlantParams = field(default_factory=PlantParams)
    simulation: SimConfig = field(default_factory=SimConfig)
    traces: TraceConfig = field(default_factory=TraceConfig)
    model: ModelConfig = field(default_factory=_default_model)
    plan: PlanConfig = field(default_factory=PlanConfig)
    reward: RewardParams = field(default_factory=RewardParams)
    action_space: SafeActionSpace = field(default_factory=SafeActionSpace)
    loop: LoopConfig = field(default_factory=LoopConfig)
    imitation: PolicyConfig = field(default_factory=PolicyConfig)
    seed: int = 0
    out_dir: str = "out"

    def agent(self) -> AgentConfig:
        return AgentConfig(
            loop=self.loop,
            model=self.model,
            plan=self.plan,
            reward=self.reward,
            action_space=self.action_space,
            imitation=self.imitation,
            seed=self.seed,
        )

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def _section(default: Any, values: Any, name: str, path: Optional[str]) -> Any:
    """`default` with the keys present in `values` replaced."""
    if not isinstance(values, dict):
        raise ConfigError(f"section {name} must be an object", path)
    known = {f.name: f for f in fields(default)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        logger.error(f"Unknown keys in section {name}: {unknown}")
        raise ConfigError(f"unknown keys in section {name}: {unknown}", path)
    kwargs = {
        key: tuple(value) if isinstance(value, list) else value
        for key, value in values.items()
    }
    try:
        return replace(default, **kwargs)
    except TypeError as e:
        raise ConfigError(f"invalid section {name}: {e}", path)


def from_dict(
    data: dict[str, Any], path: Optional[str] = None
) -> ExperimentConfig:
    """
    Build a config from a parsed document. Missing keys keep their
    defaults; unknown keys are rejected.

    Raises:
        ConfigError: unknown key, invalid value or missing trace file
    """
    unknown = sorted(set(data) - set(SECTIONS) - {"seed", "out_dir"})
    if unknown:
        logger.error(f"Unknown configuration keys: {unknown}")
        raise ConfigError(f"unknown configuration keys: {unknown}", path)
    defaults = ExperimentConfig()
    kwargs: dict[str, Any] = {
        name: _section(getattr(defaults, name), data[name], name, path)
        for name in SECTIONS
        if name in data
    }
    if "seed" in data:
        if not isinstance(data["seed"], int):
            raise ConfigError("seed must be an integer", path)
        kwargs["seed"] = data["seed"]
    if "out_dir" in data:
        kwargs["out_dir"] = str(data["out_dir"])
    cfg = ExperimentConfig(**kwargs)
    for trace_path in (cfg.traces.weather_path, cfg.traces.ite_path):
        if trace_path is not None and not Path(trace_path).exists():
            logger.error(f"Trace file not found: {trace_path}")
            raise ConfigError(f"trace file not found: {trace_path}", trace_path)
    return cfg


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        logger.error(f"Config file not found: {path}")
        raise ConfigError(f"config file not found: {path}", str(path))
    try:
        with open(path, "r") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(
            f"{path}: invalid JSON at line {e.lineno}: {e.msg}", str(path)
        )
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object", str(path))
    logger.info(f"Loaded configuration from {path}")
    return from_dict(data, str(path))


def dump_config(cfg: ExperimentConfig, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(cfg.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def required_days(cfg: ExperimentConfig, extra_steps: int = 0) -> int:
    """Whole days of trace needed for warm-up, all rounds and one spare."""
    per_day = steps_per_day(cfg.simulation.control_interval)
    steps = cfg.loop.initial_collect_steps + cfg.loop.on_policy_total
    return math.ceil((steps + extra_steps) / per_day) + 1


def build_traces(
    cfg: ExperimentConfig, days: Optional[int] = None
) -> tuple[Trace, Trace]:
    tc = cfg.traces
    days = days or tc.days or required_days(cfg)
    weather_seed, ite_seed = np.random.SeedSequence([cfg.seed, 1]).spawn(2)
    if tc.weather_path is not None:
        weather = load_trace(tc.weather_path, label="weather")
    else:
        weather = gen_weather(
            days, np.random.default_rng(weather_seed), tc.weather_preset
        )
    if tc.ite_path is not None:
        ite = load_trace(tc.ite_path, label="ite-load")
    else:
        ite = gen_ite_load(
            days, tc.peak_watts, np.random.default_rng(ite_seed), tc.ite_noise
        )
    return weather, ite


def build_environment(
    cfg: ExperimentConfig, days: Optional[int] = None
) -> TwoZoneDataCenter:
    weather, ite = build_traces(cfg, days)
    return TwoZoneDataCenter(
        weather,
        ite,
        params=cfg.plant,
        sim=cfg.simulation,
        reward_params=cfg.reward,
        initial_action=fixed_action(cfg.action_space, cfg.reward),
    )
