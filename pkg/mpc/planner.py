"""Random-shooting receding-horizon planner."""

import time
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Protocol

import numpy as np

from dynamics.rollout import History
from errors import ConfigError, PlanningError
from logger.logger import get_logger
from mpc.action_space import SafeActionSpace
from mpc.reward import RewardParams, band_violations, reward_terms
from plant.signals import RawAction

logger = get_logger(__name__)

ScoreFn = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class PlanConfig:
    horizon: int = 5
    samples: int = 8192
    seed: int = 0
    chunk_size: int = 2048
    # predicted temperatures count as violations this close to the band edges
    band_margin: float = 0.5

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ConfigError("plan horizon must be at least 1")
        if self.samples < 0:
            raise ConfigError("sample count must be non-negative")
        if self.chunk_size < 1:
            raise ConfigError("chunk_size must be at least 1")
        if self.band_margin < 0:
            raise ConfigError("band_margin must be non-negative")


class DynamicsProvider(Protocol):
    def rollout(self, history: History, actions: np.ndarray) -> np.ndarray:
        """(K, H, act_dim) raw actions -> (K, H, obs_dim) predictions."""
        ...


class ShootResult(NamedTuple):
    index: int
    z_seq: np.ndarray
    totals: np.ndarray
    violations: np.ndarray


@dataclass(frozen=True)
class PlanDiagnostics:
    best_reward: float
    worst_reward: float
    mean_reward: float
    feasible_count: int
    selected_index: int
    selected_violations: int
    selected_z: tuple[float, ...]
    wall_time: float


def select_candidate(totals: np.ndarray, violations: np.ndarray) -> int:
    """
    Highest total among zero-violation candidates; otherwise fewest
    violations, then highest total, then lowest index.
    """
    feasible = np.flatnonzero(violations == 0)
    if len(feasible) > 0:
        return int(feasible[np.argmax(totals[feasible])])
    order = np.lexsort((np.arange(len(totals)), -totals, violations))
    return int(order[0])


def shoot(
    score_fn: ScoreFn,
    action_dim: int,
    config: PlanConfig,
    rng: np.random.Generator,
    candidates: Optional[np.ndarray] = None,
) -> ShootResult:
    """
    Score candidate sequences in chunks and select one.

    Without explicit `candidates`, draws `config.samples` sequences of shape
    (horizon, action_dim) uniformly on [-1, 1]; a larger draw from the same
    generator state extends a smaller one.

    Raises:
        PlanningError: there are no candidates
    """
    if candidates is None:
        candidates = rng.uniform(
            -1.0, 1.0, size=(config.samples, config.horizon, action_dim)
        )
    if len(candidates) == 0:
        logger.error("Planner called with zero candidates")
        raise PlanningError("random shooting needs at least one candidate")

    totals = np.empty(len(candidates))
    violations = np.empty(len(candidates), dtype=np.int64)
    for start in range(0, len(candidates), config.chunk_size):
        chunk = slice(start, start + config.chunk_size)
        totals[chunk], violations[chunk] = score_fn(candidates[chunk])
    index = select_candidate(totals, violations)
    return ShootResult(index, candidates[index], totals, violations)


def evaluate_sequences(
    dynamics: DynamicsProvider,
    history: History,
    z_seqs: np.ndarray,
    a_prev: np.ndarray,
    params: RewardParams,
    space: SafeActionSpace,
    margin: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Discounted predicted reward and violation count of each sequence.

    Returns:
        (totals (K,), violations (K,)) where a violation is one zone outside
        the band, shrunk by `margin` on both sides, at one predicted step
    """
    actions = space.decode_sequences(z_seqs, a_prev)
    predicted = dynamics.rollout(history, actions)
    r, _, _, _ = reward_terms(predicted, params)
    flags = band_violations(predicted, params, margin)
    discount = params.gamma ** np.arange(z_seqs.shape[-2])
    return r @ discount, flags.sum(axis=(-2, -1))


def evaluate_sequence(
    dynamics: DynamicsProvider,
    history: History,
    z_seq: np.ndarray,
    a_prev: RawAction,
    params: RewardParams,
    space: SafeActionSpace,
    margin: float = 0.0,
) -> tuple[float, int]:
    totals, violations = evaluate_sequences(
        dynamics,
        history,
        np.asarray(z_seq, dtype=np.float64)[None],
        a_prev.to_array(),
        params,
        space,
        margin,
    )
    return float(totals[0]), int(violations[0])


def plan(
    dynamics: DynamicsProvider,
    history: History,
    a_prev: RawAction,
    config: PlanConfig,
    params: RewardParams,
    space: SafeActionSpace,
    rng: Optional[np.random.Generator] = None,
    candidates: Optional[np.ndarray] = None,
) -> tuple[RawAction, PlanDiagnostics]:
    """
    Choose the first action of the best sampled sequence.

    `rng` defaults to a generator seeded with `config.seed`; pass a
    long-lived generator to draw fresh candidates on every call.
    Feasibility is judged on the band shrunk by `config.band_margin`; the
    scored reward is unchanged.
    """
    started = time.perf_counter()
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    prev = a_prev.to_array()
    space.check(prev)

    def score(chunk: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return evaluate_sequences(
            dynamics, history, chunk, prev, params, space, config.band_margin
        )

    result = shoot(score, space.dim, config, rng, candidates)
    action = RawAction.from_array(space.decode(result.z_seq[0], prev))
    diagnostics = PlanDiagnostics(
        best_reward=float(result.totals.max()),
        worst_reward=float(result.totals.min()),
        mean_reward=float(result.totals.mean()),
        feasible_count=int(np.sum(result.violations == 0)),
        selected_index=result.index,
        selected_violations=int(result.violations[result.index]),
        selected_z=tuple(float(v) for v in result.z_seq[0]),
        wall_time=time.perf_counter() - started,
    )
    logger.debug(
        f"Planned over {len(result.totals)} candidates, "
        f"{diagnostics.feasible_count} feasible, "
        f"best {diagnostics.best_reward:.4f}",
        extra={
            "K": len(result.totals),
            "feasible": diagnostics.feasible_count,
            "wall_time": diagnostics.wall_time,
        },
    )
    return action, diagnostics
