"""Windowed delta-observation dynamics model and its weight checkpoints."""

import json
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional, Union

import numpy as np

from dynamics.network import Architecture, NetworkSpec, WindowNetwork
from errors import CheckpointError, ConfigError
from experience.buffer import WindowSet
from experience.normalization import NormStats
from logger.logger import get_logger
from plant.signals import ACT_DIM, OBS_DIM

logger = get_logger(__name__)

WEIGHTS_FORMAT_VERSION = 2
CLOCK_DIM = 2


@dataclass(frozen=True)
class ModelConfig:
    window: int = 20
    obs_dim: int = OBS_DIM
    act_dim: int = ACT_DIM
    architecture: Architecture = "recurrent-with-attention"
    hidden_size: int = 64
    attention: bool = True
    learning_rate: float = 1e-2
    batch_size: int = 128
    epochs: int = 30
    split_ratio: float = 0.8
    zero_output_init: bool = False
    linear_skip: bool = True
    # steps per clock cycle; 0 leaves the time-of-day inputs out
    clock_period: int = 0

    def __post_init__(self) -> None:
        if self.window < 1:
            raise ConfigError("model window must be at least 1")
        if self.hidden_size < 1:
            raise ConfigError("hidden_size must be at least 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError("split_ratio must be in (0, 1)")
        if self.clock_period < 0:
            raise ConfigError("clock_period must be non-negative")

    @property
    def in_dim(self) -> int:
        clock = CLOCK_DIM if self.clock_period else 0
        return self.obs_dim + self.act_dim + clock

    def network_spec(self) -> NetworkSpec:
        return NetworkSpec(
            architecture=self.architecture,
            window=self.window,
            in_dim=self.in_dim,
            hidden_size=self.hidden_size,
            out_dim=self.obs_dim,
            head="linear",
            attention=self.attention,
            skip=self.linear_skip,
        )


@lru_cache(maxsize=32)
def network_for(spec: NetworkSpec) -> WindowNetwork:
    return WindowNetwork(spec)


@dataclass(frozen=True)
class ModelWeights:
    config: ModelConfig
    theta: np.ndarray

    @property
    def network(self) -> WindowNetwork:
        return network_for(self.config.network_spec())

    def replace_theta(self, theta: np.ndarray) -> "ModelWeights":
        return ModelWeights(self.config, theta)


def init_weights(
    config: ModelConfig, rng: Optional[np.random.Generator] = None
) -> ModelWeights:
    rng = rng if rng is not None else np.random.default_rng(0)
    network = network_for(config.network_spec())
    theta = network.init(rng, zero_head=config.zero_output_init)
    return ModelWeights(config, theta)


def clock_features(steps: np.ndarray, period: int) -> np.ndarray:
    """(..., 2) sine and cosine of the position of each step in its cycle."""
    phase = 2.0 * np.pi * np.asarray(steps, dtype=np.float64) / period
    return np.stack([np.sin(phase), np.cos(phase)], axis=-1)


def model_inputs(
    obs_window: np.ndarray,
    act_window: np.ndarray,
    stats: NormStats,
    clock_period: int = 0,
    last_step: Optional[Union[int, np.ndarray]] = None,
) -> np.ndarray:
    """
    Normalised (..., W, in_dim) network input. With a clock period, the
    clock of every row is appended; `last_step` is the step index of the
    newest observation (a scalar, or one per window).

    Raises:
        ConfigError: clock inputs are on and `last_step` is missing
    """
    x = np.concatenate(
        [np.asarray(obs_window, float), np.asarray(act_window, float)], axis=-1
    )
    x = stats.normalize(x)
    if not clock_period:
        return x
    if last_step is None:
        logger.error("Clock inputs requested without step indices")
        raise ConfigError("clock inputs need the step index of the newest row")
    W = x.shape[-2]
    steps = np.asarray(last_step)[..., None] + np.arange(1 - W, 1)
    clock = clock_features(steps, clock_period)
    clock = np.broadcast_to(clock, (*x.shape[:-1], CLOCK_DIM))
    return np.concatenate([x, clock], axis=-1)


def batch_inputs(
    config: ModelConfig, batch: WindowSet, stats: NormStats
) -> np.ndarray:
    return model_inputs(
        batch.obs, batch.act, stats, config.clock_period, batch.steps[:, -2]
    )


def forward(
    weights: ModelWeights,
    obs_window: np.ndarray,
    act_window: np.ndarray,
    stats: NormStats,
    last_step: Optional[Union[int, np.ndarray]] = None,
) -> np.ndarray:
    """
    Predict o(t+1) from the windows ending at step t.

    Accepts a single window (W, dim) or a batch (B, W, dim). The network
    emits the normalised delta; the output adds it back onto o(t).
    `last_step` is t, needed only with clock inputs.
    """
    obs_window = np.asarray(obs_window, dtype=np.float64)
    single = obs_window.ndim == 2
    x = model_inputs(
        obs_window, act_window, stats, weights.config.clock_period, last_step
    )
    if single:
        x = x[None]
    delta = weights.network.predict(weights.theta, x) * stats.delta_scale
    out = (obs_window if not single else obs_window[None])[:, -1] + delta
    return out[0] if single else out


def normalized_targets(batch: WindowSet, stats: NormStats) -> np.ndarray:
    return batch.target / stats.delta_scale


def loss_and_grad_arrays(
    network: WindowNetwork,
    theta: np.ndarray,
    x: np.ndarray,
    target: np.ndarray,
    with_grad: bool = True,
) -> tuple[float, Optional[np.ndarray]]:
    """Mean of ½‖y - target‖² over the batch and its gradient."""
    y, cache = network.forward(theta, x)
    err = y - target
    value = float(np.mean(0.5 * np.sum(err**2, axis=1)))
    if not with_grad:
        return value, None
    return value, network.backward(theta, cache, err / len(x))


def loss(weights: ModelWeights, batch: WindowSet, stats: NormStats) -> float:
    if len(batch) == 0:
        raise ValueError("loss needs a non-empty batch")
    x = batch_inputs(weights.config, batch, stats)
    value, _ = loss_and_grad_arrays(
        weights.network,
        weights.theta,
        x,
        normalized_targets(batch, stats),
        with_grad=False,
    )
    return value


def backward(
    weights: ModelWeights, batch: WindowSet, stats: NormStats
) -> np.ndarray:
    """Exact gradient of `loss` with respect to the flat parameters."""
    if len(batch) == 0:
        raise ValueError("backward needs a non-empty batch")
    x = batch_inputs(weights.config, batch, stats)
    _, grad = loss_and_grad_arrays(
        weights.network, weights.theta, x, normalized_targets(batch, stats)
    )
    assert grad is not None
    return grad


def save_weights(
    path: Union[str, Path],
    config: Union[ModelConfig, object],
    theta: np.ndarray,
    stats: Optional[NormStats] = None,
    kind: str = "dynamics",
) -> None:
    """
    Write a versioned .npz: the flat parameters, a JSON header with the
    network config and, when given, the frozen normalisation statistics.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "format_version": WEIGHTS_FORMAT_VERSION,
        "kind": kind,
        "config": asdict(config),  # type: ignore[call-overload]
    }
    arrays = {"theta": theta, "header": np.array(json.dumps(header))}
    if stats is not None:
        arrays.update(stats.to_arrays())
    with open(path, "wb") as f:
        np.savez(f, **arrays)
    logger.debug(f"Saved {kind} weights ({theta.size} parameters) to {path}")


def read_weights(
    path: Union[str, Path], kind: str
) -> tuple[dict, np.ndarray, Optional[NormStats]]:
    """Header config dict, parameters and stats of a weights file."""
    path = Path(path)
    if not path.exists():
        logger.error(f"Weights file not found: {path}")
        raise CheckpointError(f"weights file not found: {path}")
    with np.load(path, allow_pickle=False) as archive:
        header = json.loads(str(archive["header"]))
        if header.get("format_version") != WEIGHTS_FORMAT_VERSION:
            logger.error(f"Unsupported weights version in {path}")
            raise CheckpointError(
                f"{path}: weights format version "
                f"{header.get('format_version')} is not supported"
            )
        if header.get("kind") != kind:
            raise CheckpointError(
                f"{path} holds {header.get('kind')} weights, expected {kind}"
            )
        theta = np.array(archive["theta"], dtype=np.float64)
        stats = (
            NormStats.from_arrays(archive)
            if "stats_mean" in archive.files
            else None
        )
    return header["config"], theta, stats


def save_model(
    path: Union[str, Path],
    weights: ModelWeights,
    stats: Optional[NormStats] = None,
) -> None:
    save_weights(path, weights.config, weights.theta, stats, kind="dynamics")


def load_model(
    path: Union[str, Path],
) -> tuple[ModelWeights, Optional[NormStats]]:
    config, theta, stats = read_weights(path, kind="dynamics")
    weights = ModelWeights(ModelConfig(**config), theta)
    if theta.size != weights.network.layout.size:
        raise CheckpointError(f"{path}: parameter count does not match config")
    return weights, stats
