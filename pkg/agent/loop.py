"""
Agent loops: initial data collection, model-based control with the
planner, the distilled imitation policy, and baseline controllers.
"""

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Literal, Optional, Union

import numpy as np
import polars as pl

from agent.checkpoint import (
    STATE_FILE,
    RunState,
    cleanup_checkpoint,
    load_checkpoint,
    save_checkpoint,
    spawn_rngs,
)
from agent.metrics import MetricsReport, episode_log_frame, steps_per_day
from dynamics.model import ModelConfig, init_weights
from dynamics.rollout import History, NeuralDynamics, evaluate_deviation
from dynamics.training import train
from errors import ActionBoundsError, ConfigError, TraceExhaustedError
from experience.buffer import (
    DEFAULT_CAPACITY,
    ExperienceBuffer,
    TrajectoryStep,
    compute_norm_stats,
)
from experience.normalization import NormStats
from imitation.dataset import ImitationBuffer, aggregate
from imitation.policy import (
    PolicyConfig,
    init_policy,
    policy_forward,
    train_policy,
)
from logger.logger import get_logger
from mpc.action_space import SafeActionSpace
from mpc.planner import DynamicsProvider, PlanConfig, PlanDiagnostics, plan
from mpc.reward import RewardParams
from plant.environment import TwoZoneDataCenter
from plant.oracle import SimulatorOracle
from plant.signals import ACT_FIELDS, OBS_FIELDS, RawAction

logger = get_logger(__name__)

Mode = Literal["mpc", "imitation", "baseline-fixed", "baseline-default"]
BaselineKind = Literal["fixed-setpoint", "default-perturbed"]
RNG_STREAMS = ("explore", "init", "train", "plan", "policy")
RoundCallback = Callable[[int], None]


@dataclass(frozen=True)
class LoopConfig:
    initial_collect_steps: int = 6240
    on_policy_steps: int = 672
    epochs: int = 30
    total_rounds: int = 5
    mode: Mode = "mpc"
    capacity: int = DEFAULT_CAPACITY
    exploration_half_width: float = 0.3
    deviation_horizon: int = 96
    deviation_starts: int = 20

    def __post_init__(self) -> None:
        counts = (
            self.initial_collect_steps,
            self.on_policy_steps,
            self.epochs,
            self.total_rounds,
        )
        if min(counts) < 0:
            raise ConfigError("loop step, epoch and round counts must be >= 0")
        if self.mode not in ("mpc", "imitation", "baseline-fixed", "baseline-default"):
            raise ConfigError(f"unknown loop mode {self.mode!r}")
        if self.capacity < 1:
            raise ConfigError("buffer capacity must be at least 1")
        if not 0.0 <= self.exploration_half_width <= 0.5:
            raise ConfigError("exploration_half_width must be in [0, 0.5]")
        if self.deviation_horizon < 1 or self.deviation_starts < 1:
            raise ConfigError("deviation horizon and starts must be >= 1")

    @property
    def on_policy_total(self) -> int:
        return self.on_policy_steps * self.total_rounds


@dataclass(frozen=True)
class AgentConfig:
    loop: LoopConfig = field(default_factory=LoopConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    plan: PlanConfig = field(default_factory=PlanConfig)
    reward: RewardParams = field(default_factory=RewardParams)
    action_space: SafeActionSpace = field(default_factory=SafeActionSpace)
    imitation: PolicyConfig = field(default_factory=PolicyConfig)
    seed: int = 0

    def fingerprint(self) -> str:
        text = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()


def run_fingerprint(env: TwoZoneDataCenter, cfg: AgentConfig) -> str:
    """Identity of a run: the agent settings plus the plant and its traces."""
    text = f"{cfg.fingerprint()}:{env.fingerprint()}"
    return hashlib.sha256(text.encode()).hexdigest()


def fixed_action(space: SafeActionSpace, reward: RewardParams) -> RawAction:
    """Both setpoints at the comfort centre, flows at mid-range."""
    mid = (space.low + space.high) / 2.0
    target = np.array([reward.T_C, reward.T_C, mid[2], mid[3]])
    return RawAction.from_array(np.clip(target, space.low, space.high))


def default_policy_action(
    space: SafeActionSpace,
    anchor: RawAction,
    rng: np.random.Generator,
    half_width: float,
) -> RawAction:
    """Fixed action perturbed by uniform z-noise of the given half-width."""
    z = rng.uniform(-half_width, half_width, size=space.dim)
    return RawAction.from_array(space.decode(z, anchor.to_array()))


def recent_history(
    buffer: ExperienceBuffer,
    obs_now: np.ndarray,
    filler_action: np.ndarray,
    window: int,
    step: Optional[int] = None,
) -> History:
    """
    The last `window` observations (ending with the current one, whose
    step index is `step`) and the `window - 1` executed actions before it;
    a short history is padded by repeating its oldest entry.
    """
    recent = buffer.latest(window - 1)
    obs = np.vstack([recent.obs, obs_now[None]])
    act = recent.act
    if len(obs) < window:
        obs = np.vstack([np.repeat(obs[:1], window - len(obs), axis=0), obs])
    if len(act) < window - 1:
        first = act[:1] if len(act) else filler_action[None]
        act = np.vstack([np.repeat(first, window - 1 - len(act), axis=0), act])
    return History(obs, act, step)


def _execute(
    env: TwoZoneDataCenter,
    state: RunState,
    action: RawAction,
    space: SafeActionSpace,
    log: bool,
) -> float:
    prev = env.last_action.to_array()
    if not space.is_safe_transition(prev, action.to_array()):
        logger.error(f"Unsafe transition {prev.tolist()} -> {action}")
        raise ActionBoundsError(f"action {action} violates the safe action set")
    o = env.observation
    step_index = env.interval
    result = env.step(action)
    state.buffer.append(TrajectoryStep(o, action, env.episode_id, step_index))
    if log:
        row = {"step": len(state.log_rows)}
        row.update(zip(OBS_FIELDS, result.observation.to_array().tolist()))
        row.update(zip(ACT_FIELDS, action.to_array().tolist()))
        row["reward"] = result.reward
        row["violation_west"] = result.info["violation_west"]
        row["violation_east"] = result.info["violation_east"]
        state.log_rows.append(row)
        _log_day(state, env)
    return result.reward


def _log_day(state: RunState, env: TwoZoneDataCenter) -> None:
    per_day = steps_per_day(env.sim.control_interval)
    if len(state.log_rows) % per_day:
        return
    day = state.log_rows[-per_day:]
    tvr = np.mean([r["violation_west"] or r["violation_east"] for r in day])
    power = np.mean([r["P_ite"] + r["P_hvac"] for r in day])
    logger.info(
        f"Day {len(state.log_rows) // per_day - 1}: TVR {tvr:.3f}, "
        f"average power {power:.1f} W",
        extra={"tvr": float(tvr), "power": float(power)},
    )


def _require_intervals(env: TwoZoneDataCenter, steps: int) -> None:
    if env.remaining_intervals() < steps:
        logger.error(
            f"Traces hold {env.remaining_intervals()} intervals, {steps} needed"
        )
        raise TraceExhaustedError(
            f"traces hold {env.remaining_intervals()} control intervals but "
            f"{steps} are required"
        )


def collect_initial(
    env: TwoZoneDataCenter,
    steps: int,
    space: SafeActionSpace = SafeActionSpace(),
    rng: Optional[np.random.Generator] = None,
    half_width: float = 0.3,
    capacity: int = DEFAULT_CAPACITY,
    anchor: Optional[RawAction] = None,
    state: Optional[RunState] = None,
) -> ExperienceBuffer:
    """
    Run the default controller for `steps` intervals and record every
    transition.

    Raises:
        TraceExhaustedError: the traces cannot cover `steps` intervals
    """
    _require_intervals(env, steps)
    rng = rng if rng is not None else np.random.default_rng(0)
    anchor = anchor or env.initial_action
    if state is None:
        state = RunState(ExperienceBuffer(capacity), {})
    for _ in range(steps):
        action = default_policy_action(space, anchor, rng, half_width)
        _execute(env, state, action, space, log=False)
    logger.info(f"Collected {steps} initial steps with the default policy")
    return state.buffer


def _fit_dynamics(
    state: RunState, cfg: AgentConfig
) -> tuple[NormStats, float, float]:
    stats = compute_norm_stats(state.buffer)
    if state.dynamics is None:
        state.dynamics = init_weights(cfg.model, state.rngs["init"])
    result = train(
        state.dynamics,
        state.buffer,
        replace(cfg.model, epochs=cfg.loop.epochs),
        stats=stats,
        rng=state.rngs["train"],
    )
    state.dynamics = result.weights
    train_loss = result.train_curve[-1] if result.train_curve else float("nan")
    return stats, train_loss, result.val_loss


def _round_deviation(
    state: RunState, cfg: AgentConfig, stats: NormStats
) -> tuple[float, float]:
    """Mean H-step deviation over the validation tail of the buffer."""
    assert state.dynamics is not None
    snap = state.buffer.snapshot()
    W, H = cfg.model.window, cfg.loop.deviation_horizon
    val_start = math.ceil(cfg.model.split_ratio * len(snap.obs))
    first = max(val_start, W - 1)
    last = len(snap.obs) - H - 1
    if last < first:
        logger.warning("Validation tail too short for the deviation horizon")
        return float("nan"), 0.0
    starts = np.unique(
        np.linspace(first, last, cfg.loop.deviation_starts).round().astype(int)
    )
    result = evaluate_deviation(
        state.dynamics,
        stats,
        snap.obs,
        snap.act,
        H,
        starts=starts,
        steps=snap.step,
    )
    return result.mean, result.coverage


def _plan_row(
    state: RunState, round_index: int, diag: PlanDiagnostics
) -> dict[str, object]:
    return {
        "step": len(state.log_rows),
        "round": round_index,
        "best_reward": diag.best_reward,
        "worst_reward": diag.worst_reward,
        "mean_reward": diag.mean_reward,
        "feasible_count": diag.feasible_count,
        "selected_violations": diag.selected_violations,
        **{f"z_{name}": v for name, v in zip(ACT_FIELDS, diag.selected_z)},
        "wall_time": diag.wall_time,
    }


def _start(
    env: TwoZoneDataCenter,
    cfg: AgentConfig,
    checkpoint_dir: Optional[Path],
    buffer: Optional[ExperienceBuffer],
) -> RunState:
    rngs = spawn_rngs(cfg.seed, RNG_STREAMS)
    if checkpoint_dir is not None:
        loaded = load_checkpoint(checkpoint_dir, run_fingerprint(env, cfg), rngs)
        if loaded is not None:
            state, env_state = loaded
            env.load_state_dict(env_state)
            return state
    loop = cfg.loop
    collect = buffer is None
    _require_intervals(
        env, loop.on_policy_total + (loop.initial_collect_steps if collect else 0)
    )
    if buffer is None:
        buffer = ExperienceBuffer(loop.capacity)
    state = RunState(buffer, rngs)
    if collect:
        collect_initial(
            env,
            loop.initial_collect_steps,
            cfg.action_space,
            rngs["explore"],
            loop.exploration_half_width,
            anchor=fixed_action(cfg.action_space, cfg.reward),
            state=state,
        )
        if checkpoint_dir is not None:
            save_checkpoint(
                checkpoint_dir, state, env.state_dict(), run_fingerprint(env, cfg)
            )
    return state


def _finish(
    env: TwoZoneDataCenter,
    state: RunState,
    cfg: AgentConfig,
    mode: str,
    checkpoint_dir: Optional[Path],
) -> MetricsReport:
    if checkpoint_dir is not None:
        cleanup_checkpoint(checkpoint_dir)
    return MetricsReport.from_log(
        mode,
        episode_log_frame(state.log_rows),
        cfg.reward,
        steps_per_day(env.sim.control_interval),
        rounds=pl.DataFrame(state.round_rows) if state.round_rows else None,
        plan_log=pl.DataFrame(state.plan_rows) if state.plan_rows else None,
    )


def _run_rounds(
    env: TwoZoneDataCenter,
    cfg: AgentConfig,
    state: RunState,
    round_body: Callable[[int], dict[str, object]],
    checkpoint_dir: Optional[Path],
    on_round_end: Optional[RoundCallback],
) -> None:
    fingerprint = run_fingerprint(env, cfg)
    saved = checkpoint_dir is not None and (checkpoint_dir / STATE_FILE).exists()
    try:
        for r in range(state.round_index, cfg.loop.total_rounds):
            logger.info(f"Starting round {r + 1}/{cfg.loop.total_rounds}")
            row = round_body(r)
            row["cumulative_reward"] = float(
                sum(x["reward"] for x in state.log_rows)
            )
            row["env_steps"] = int(env.interval)
            state.round_rows.append(row)
            state.round_index = r + 1
            if checkpoint_dir is not None:
                saved = save_checkpoint(
                    checkpoint_dir, state, env.state_dict(), fingerprint
                )
            if on_round_end is not None:
                on_round_end(r)
    except KeyboardInterrupt:
        note = _progress_note(checkpoint_dir, saved)
        logger.warning(f"Run interrupted by user. {note}")
        raise
    except Exception as e:
        logger.error(f"Run failed: {e}. {_progress_note(checkpoint_dir, saved)}")
        raise


def _progress_note(checkpoint_dir: Optional[Path], saved: bool) -> str:
    if checkpoint_dir is None:
        return "No checkpoint directory was given."
    if saved:
        return f"Progress saved to checkpoint {checkpoint_dir}."
    return f"The latest progress could not be saved to {checkpoint_dir}."


def run_mbrl(
    env: TwoZoneDataCenter,
    cfg: AgentConfig = AgentConfig(),
    *,
    buffer: Optional[ExperienceBuffer] = None,
    oracle: bool = False,
    checkpoint_dir: Optional[Union[str, Path]] = None,
    on_round_end: Optional[RoundCallback] = None,
) -> MetricsReport:
    """
    Model-based control: each round fits the dynamics model on the buffer,
    then plans and executes one action per control interval, appending
    every transition to the buffer.

    With `oracle`, the planner queries the simulator instead of a learned
    model and no model is trained. A checkpoint is written after initial
    collection and after every round; an existing checkpoint in
    `checkpoint_dir` is resumed.
    """
    checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
    state = _start(env, cfg, checkpoint_dir, buffer)

    def body(r: int) -> dict[str, object]:
        row: dict[str, object] = {"round": r}
        provider: DynamicsProvider
        if oracle:
            provider = SimulatorOracle(env)
            row.update(
                train_loss=None, val_loss=None, val_deviation=None, coverage=None
            )
        else:
            stats, train_loss, val_loss = _fit_dynamics(state, cfg)
            deviation, coverage = _round_deviation(state, cfg, stats)
            assert state.dynamics is not None
            provider = NeuralDynamics(state.dynamics, stats)
            row.update(
                train_loss=train_loss,
                val_loss=val_loss,
                val_deviation=deviation,
                coverage=coverage,
            )
        for _ in range(cfg.loop.on_policy_steps):
            history = recent_history(
                state.buffer,
                env.observation.to_array(),
                env.last_action.to_array(),
                cfg.model.window,
                env.interval,
            )
            action, diag = plan(
                provider,
                history,
                env.last_action,
                cfg.plan,
                cfg.reward,
                cfg.action_space,
                rng=state.rngs["plan"],
            )
            state.plan_rows.append(_plan_row(state, r, diag))
            _execute(env, state, action, cfg.action_space, log=True)
        row["agreement_mse"] = None
        return row

    _run_rounds(env, cfg, state, body, checkpoint_dir, on_round_end)
    return _finish(env, state, cfg, "mpc-oracle" if oracle else "mpc", checkpoint_dir)


def run_mbrl_imitation(
    env: TwoZoneDataCenter,
    cfg: AgentConfig = AgentConfig(),
    *,
    buffer: Optional[ExperienceBuffer] = None,
    checkpoint_dir: Optional[Union[str, Path]] = None,
    on_round_end: Optional[RoundCallback] = None,
) -> MetricsReport:
    """
    Data aggregation with a distilled policy: the policy acts, the planner
    labels each visited window afterwards with the round's frozen dynamics,
    and the policy is refitted on all labels at the end of the round.
    """
    checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
    state = _start(env, cfg, checkpoint_dir, buffer)
    pcfg = cfg.imitation
    if state.policy is None:
        state.policy = init_policy(pcfg, state.rngs["policy"])
    if state.imitation is None:
        state.imitation = ImitationBuffer(pcfg.window, pcfg.capacity)

    def body(r: int) -> dict[str, object]:
        stats, train_loss, val_loss = _fit_dynamics(state, cfg)
        deviation, coverage = _round_deviation(state, cfg, stats)
        assert state.dynamics is not None and state.policy is not None
        assert state.imitation is not None
        provider = NeuralDynamics(state.dynamics, stats)
        policy_stats = state.policy_stats or stats
        window = max(cfg.model.window, pcfg.window)
        agreement = []
        for _ in range(cfg.loop.on_policy_steps):
            history = recent_history(
                state.buffer,
                env.observation.to_array(),
                env.last_action.to_array(),
                window,
                env.interval,
            )
            a_prev = env.last_action
            obs_window = history.obs[-pcfg.window :]
            z = policy_forward(state.policy, obs_window, policy_stats)
            action = RawAction.from_array(
                cfg.action_space.decode(z, a_prev.to_array())
            )
            _execute(env, state, action, cfg.action_space, log=True)

            model_history = History(
                history.obs[-cfg.model.window :],
                history.act[len(history.act) - (cfg.model.window - 1) :],
                history.step,
            )
            _, diag = plan(
                provider,
                model_history,
                a_prev,
                cfg.plan,
                cfg.reward,
                cfg.action_space,
                rng=state.rngs["plan"],
            )
            state.plan_rows.append(_plan_row(state, r, diag))
            label = np.asarray(diag.selected_z)
            aggregate(state.imitation, obs_window, label)
            agreement.append(0.5 * float(np.sum((z - label) ** 2)))

        state.policy = train_policy(
            state.policy, state.imitation, stats, rng=state.rngs["policy"]
        )
        state.policy_stats = stats
        return {
            "round": r,
            "train_loss": train_loss,
            "val_loss": val_loss,
            "val_deviation": deviation,
            "coverage": coverage,
            "agreement_mse": float(np.mean(agreement)) if agreement else None,
        }

    _run_rounds(env, cfg, state, body, checkpoint_dir, on_round_end)
    return _finish(env, state, cfg, "imitation", checkpoint_dir)


def run_baseline(
    env: TwoZoneDataCenter,
    kind: BaselineKind,
    cfg: AgentConfig = AgentConfig(),
) -> MetricsReport:
    """
    Run a non-learning controller. The first `initial_collect_steps`
    intervals are a warm-up that is not logged, so the logged days line up
    with the on-policy days of the learning modes.
    """
    if kind not in ("fixed-setpoint", "default-perturbed"):
        raise ConfigError(f"unknown baseline {kind!r}")
    loop = cfg.loop
    _require_intervals(env, loop.initial_collect_steps + loop.on_policy_total)
    rngs = spawn_rngs(cfg.seed, RNG_STREAMS)
    state = RunState(ExperienceBuffer(loop.capacity), rngs)
    anchor = fixed_action(cfg.action_space, cfg.reward)

    def act() -> RawAction:
        if kind == "fixed-setpoint":
            return anchor
        return default_policy_action(
            cfg.action_space, anchor, rngs["explore"], loop.exploration_half_width
        )

    for _ in range(loop.initial_collect_steps):
        _execute(env, state, act(), cfg.action_space, log=False)
    for _ in range(loop.on_policy_total):
        _execute(env, state, act(), cfg.action_space, log=True)
    mode = "baseline-fixed" if kind == "fixed-setpoint" else "baseline-default"
    logger.info(f"Baseline {kind} finished {loop.on_policy_total} logged steps")
    return _finish(env, state, cfg, mode, None)


Controller = Literal["fixed", "default", "scripted"]


def simulate(
    env: TwoZoneDataCenter,
    cfg: AgentConfig,
    controller: Controller,
    steps: int,
    actions: Optional[np.ndarray] = None,
) -> MetricsReport:
    """
    Drive the plant with a non-learning controller from a fresh start and
    log every interval. Scripted targets are cycled and approached through
    the safety decoder, one rate-limited step at a time.
    """
    if controller not in ("fixed", "default", "scripted"):
        raise ConfigError(f"unknown controller {controller!r}")
    if controller == "scripted" and (actions is None or len(actions) == 0):
        raise ConfigError("scripted controller needs at least one action row")
    _require_intervals(env, steps)
    space = cfg.action_space
    rngs = spawn_rngs(cfg.seed, RNG_STREAMS)
    state = RunState(ExperienceBuffer(cfg.loop.capacity), rngs)
    anchor = fixed_action(space, cfg.reward)
    for t in range(steps):
        if controller == "fixed":
            action = anchor
        elif controller == "default":
            action = default_policy_action(
                space, anchor, rngs["explore"], cfg.loop.exploration_half_width
            )
        else:
            assert actions is not None
            prev = env.last_action.to_array()
            target = np.asarray(actions[t % len(actions)], dtype=np.float64)
            z = np.clip((target - prev) / space.step, -1.0, 1.0)
            action = RawAction.from_array(space.decode(z, prev))
        _execute(env, state, action, space, log=True)
    return _finish(env, state, cfg, f"simulate-{controller}", None)
