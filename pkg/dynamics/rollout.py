"""Open-loop rollout of the learned model and H-step deviation."""

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from dynamics.model import ModelWeights, clock_features, forward
from errors import ConfigError, DeviationGuardError, DimensionMismatchError
from experience.normalization import NormStats
from logger.logger import get_logger

logger = get_logger(__name__)

DEVIATION_GUARD = 1e-9


class History(NamedTuple):
    """
    Recent trajectory at decision time t.

    obs: (W, obs_dim) observations o(t-W+1..t)
    act: (W-1, act_dim) executed actions a(t-W+1..t-1)
    step: index of o(t); required by models with clock inputs
    """

    obs: np.ndarray
    act: np.ndarray
    step: Optional[int] = None


def _check_history(weights: ModelWeights, history: History) -> None:
    W = weights.config.window
    if history.obs.shape[0] != W or history.act.shape[0] != W - 1:
        raise DimensionMismatchError(
            f"history must hold {W} observations and {W - 1} actions, got "
            f"{history.obs.shape[0]} and {history.act.shape[0]}"
        )
    if weights.config.clock_period and history.step is None:
        logger.error("History without a step index for a clocked model")
        raise ConfigError("model has clock inputs; history needs its step")


def rollout_batch(
    weights: ModelWeights,
    history: History,
    actions: np.ndarray,
    stats: NormStats,
) -> np.ndarray:
    """
    Roll K candidate action sequences forward from one shared history.

    Each prediction is fed back as the newest observation of the next
    window. The history part of every window is encoded once and shared by
    all candidates.

    Args:
        actions: (K, H, act_dim) raw actions a(t..t+H-1)

    Returns:
        (K, H, obs_dim) predictions o(t+1..t+H)
    """
    _check_history(weights, history)
    cfg = weights.config
    network = weights.network
    W = cfg.window
    K, H, _ = actions.shape
    obs_stats, act_stats = stats.obs_part(), stats.act_part()

    # row j of every sequence below is time t-W+1+j
    if cfg.clock_period:
        assert history.step is not None
        rows = history.step + np.arange(1 - W, H)
        clock = clock_features(rows, cfg.clock_period)
    else:
        clock = np.zeros((W - 1 + H, 0))

    obs_hist_n = obs_stats.normalize(history.obs)
    act_hist_n = act_stats.normalize(history.act) if W > 1 else history.act
    x_hist = np.concatenate(
        [obs_hist_n[: W - 1], act_hist_n, clock[: W - 1]], axis=1
    )

    obs_seq = np.empty((K, W + H, cfg.obs_dim))
    obs_seq[:, :W] = obs_hist_n
    act_seq = np.empty((K, W - 1 + H, cfg.act_dim))
    act_seq[:, : W - 1] = act_hist_n
    act_seq[:, W - 1 :] = act_stats.normalize(actions)

    last = np.broadcast_to(history.obs[-1], (K, cfg.obs_dim)).copy()
    preds = np.empty((K, H, cfg.obs_dim))
    for h in range(H):
        shared = max(W - 1 - h, 0)
        rows = slice(h + shared, h + W)
        tail = np.concatenate(
            [
                obs_seq[:, rows],
                act_seq[:, rows],
                np.broadcast_to(clock[rows], (K, W - shared, clock.shape[1])),
            ],
            axis=2,
        )
        ctx = network.encode_with_prefix(
            weights.theta, x_hist[h : h + shared], tail
        )
        delta = network.head(weights.theta, ctx, tail[:, -1])
        last = last + delta * stats.delta_scale
        preds[:, h] = last
        obs_seq[:, W + h] = obs_stats.normalize(last)
    return preds


def open_loop_rollout(
    weights: ModelWeights,
    seed_obs: np.ndarray,
    seed_act: np.ndarray,
    actions: np.ndarray,
    stats: NormStats,
    step: Optional[int] = None,
) -> np.ndarray:
    """
    Predict o(t+1..t+H) for one action sequence of length H.

    Args:
        seed_obs: (W, obs_dim) ground truth o(t-W+1..t)
        seed_act: (W-1, act_dim) ground truth a(t-W+1..t-1)
        actions: (H, act_dim) a(t..t+H-1)
        step: t, for models with clock inputs
    """
    actions = np.asarray(actions, dtype=np.float64)
    if actions.ndim != 2 or len(actions) < 1:
        raise ValueError("rollout needs at least one action")
    history = History(
        np.asarray(seed_obs, float), np.asarray(seed_act, float), step
    )
    return rollout_batch(weights, history, actions[None], stats)[0]


def rollout_series(
    weights: ModelWeights,
    obs: np.ndarray,
    act: np.ndarray,
    starts: np.ndarray,
    H: int,
    stats: NormStats,
    steps: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Open-loop rollouts from several start points of one recorded series,
    driven by the recorded actions. `steps` holds the step index of every
    row of the series and defaults to the row positions.

    Returns:
        (len(starts), H, obs_dim); start s is the index of o(t)
    """
    W = weights.config.window
    B = len(starts)
    steps = np.arange(len(obs)) if steps is None else np.asarray(steps)
    offsets = np.arange(-(W - 1), H)
    obs_seq = obs[starts[:, None] + offsets[None, :W]].copy()
    obs_seq = np.concatenate(
        [obs_seq, np.zeros((B, H, obs.shape[1]))], axis=1
    )
    act_seq = act[starts[:, None] + offsets[None, :]]
    for h in range(H):
        obs_seq[:, W + h] = forward(
            weights,
            obs_seq[:, h : h + W],
            act_seq[:, h : h + W],
            stats,
            steps[starts] + h,
        )
    return obs_seq[:, W:]


def deviation(
    predicted: np.ndarray, ground_truth: np.ndarray, H: Optional[int] = None
) -> float:
    """
    Mean over the horizon of the Euclidean norm of the elementwise
    relative error (truth - prediction) / truth.

    Raises:
        DeviationGuardError: a ground-truth component is within 1e-9 of 0
    """
    predicted = np.atleast_2d(np.asarray(predicted, dtype=np.float64))
    ground_truth = np.atleast_2d(np.asarray(ground_truth, dtype=np.float64))
    if predicted.shape != ground_truth.shape:
        raise DimensionMismatchError("prediction and truth shapes differ")
    if H is not None and len(ground_truth) != H:
        raise DimensionMismatchError(f"expected {H} steps, got {len(ground_truth)}")
    if np.any(np.abs(ground_truth) < DEVIATION_GUARD):
        raise DeviationGuardError("ground truth has a near-zero component")
    rel = (ground_truth - predicted) / ground_truth
    return float(np.mean(np.linalg.norm(rel, axis=1)))


@dataclass(frozen=True)
class DeviationResult:
    mean: float
    coverage: float
    per_start: list[float]
    starts: list[int]


def evenly_spaced_starts(
    length: int, window: int, H: int, count: int
) -> np.ndarray:
    """Up to `count` distinct start indices with a full window and horizon."""
    first, last = window - 1, length - H - 1
    if last < first:
        return np.zeros(0, dtype=np.int64)
    return np.unique(np.linspace(first, last, count).round().astype(np.int64))


def evaluate_deviation(
    weights: ModelWeights,
    stats: NormStats,
    obs: np.ndarray,
    act: np.ndarray,
    H: int,
    starts: Optional[Sequence[int]] = None,
    count: int = 20,
    steps: Optional[np.ndarray] = None,
) -> DeviationResult:
    """
    Mean H-step deviation of open-loop rollouts over a recorded series.
    `steps` are the step indices of the rows, as for `rollout_series`.

    Start points whose ground truth trips the division guard are excluded
    and reported through `coverage`.
    """
    obs = np.asarray(obs, dtype=np.float64)
    act = np.asarray(act, dtype=np.float64)
    W = weights.config.window
    if starts is None:
        start_arr = evenly_spaced_starts(len(obs), W, H, count)
    else:
        start_arr = np.asarray(starts, dtype=np.int64)
    if len(start_arr) == 0:
        logger.error(f"Series of {len(obs)} steps too short for W={W}, H={H}")
        raise ValueError(
            f"series of {len(obs)} steps is too short for window {W} "
            f"and horizon {H}"
        )

    preds = rollout_series(weights, obs, act, start_arr, H, stats, steps)
    kept: list[float] = []
    kept_starts: list[int] = []
    for s, pred in zip(start_arr, preds):
        try:
            kept.append(deviation(pred, obs[s + 1 : s + 1 + H], H))
            kept_starts.append(int(s))
        except DeviationGuardError:
            logger.warning(f"Start {s} excluded from deviation: zero truth")
    coverage = len(kept) / len(start_arr)
    mean = float(np.mean(kept)) if kept else float("nan")
    return DeviationResult(mean, coverage, kept, kept_starts)


class NeuralDynamics:
    """Rollout provider backed by the learned model and frozen stats."""

    def __init__(self, weights: ModelWeights, stats: NormStats):
        self.weights = weights
        self.stats = stats

    @property
    def window(self) -> int:
        return self.weights.config.window

    def rollout(self, history: History, actions: np.ndarray) -> np.ndarray:
        return rollout_batch(self.weights, history, actions, self.stats)
