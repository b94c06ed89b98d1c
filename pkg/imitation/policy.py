"""Window policy network that clones planner decisions."""

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from dynamics.model import network_for, read_weights, save_weights
from dynamics.network import Architecture, NetworkSpec, WindowNetwork
from dynamics.training import sgd_epochs
from errors import CheckpointError, ConfigError, EmptyBufferError
from experience.buffer import DEFAULT_CAPACITY
from experience.normalization import NormStats
from imitation.dataset import ImitationBuffer
from logger.logger import get_logger
from plant.signals import ACT_DIM, OBS_DIM

logger = get_logger(__name__)


@dataclass(frozen=True)
class PolicyConfig:
    window: int = 20
    obs_dim: int = OBS_DIM
    act_dim: int = ACT_DIM
    architecture: Architecture = "recurrent-with-attention"
    hidden_size: int = 64
    attention: bool = True
    learning_rate: float = 1e-2
    batch_size: int = 128
    epochs: int = 30
    capacity: int = DEFAULT_CAPACITY
    zero_output_init: bool = True

    def __post_init__(self) -> None:
        if self.window < 1 or self.hidden_size < 1:
            raise ConfigError("policy window and hidden_size must be >= 1")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("invalid policy optimisation settings")
        if self.capacity < 1:
            raise ConfigError("policy dataset capacity must be at least 1")

    def network_spec(self) -> NetworkSpec:
        return NetworkSpec(
            architecture=self.architecture,
            window=self.window,
            in_dim=self.obs_dim,
            hidden_size=self.hidden_size,
            out_dim=self.act_dim,
            head="tanh",
            attention=self.attention,
        )


@dataclass(frozen=True)
class PolicyWeights:
    config: PolicyConfig
    phi: np.ndarray

    @property
    def network(self) -> WindowNetwork:
        return network_for(self.config.network_spec())


def init_policy(
    config: PolicyConfig, rng: Optional[np.random.Generator] = None
) -> PolicyWeights:
    """Zero output layer by default, so a fresh policy holds the action."""
    rng = rng if rng is not None else np.random.default_rng(0)
    network = network_for(config.network_spec())
    return PolicyWeights(config, network.init(rng, config.zero_output_init))


def _obs_stats(stats: NormStats, obs_dim: int) -> NormStats:
    return stats if stats.dim == obs_dim else stats.obs_part()


def _inputs(
    weights: PolicyWeights, obs_windows: np.ndarray, stats: NormStats
) -> np.ndarray:
    return _obs_stats(stats, weights.config.obs_dim).normalize(obs_windows)


def policy_forward(
    weights: PolicyWeights, obs_window: np.ndarray, stats: NormStats
) -> np.ndarray:
    """Normalised action in [-1, 1] for a (W, obs_dim) or (B, W, obs_dim) window."""
    obs_window = np.asarray(obs_window, dtype=np.float64)
    x = _inputs(weights, obs_window, stats)
    if obs_window.ndim == 2:
        return weights.network.predict(weights.phi, x[None])[0]
    return weights.network.predict(weights.phi, x)


def imitation_loss(
    weights: PolicyWeights,
    obs_windows: np.ndarray,
    labels: np.ndarray,
    stats: NormStats,
) -> float:
    """Mean over the batch of ½‖policy(window) - label‖²."""
    if len(labels) == 0:
        raise ValueError("imitation loss needs a non-empty batch")
    z = weights.network.predict(weights.phi, _inputs(weights, obs_windows, stats))
    return float(np.mean(0.5 * np.sum((z - labels) ** 2, axis=1)))


def imitation_gradient(
    weights: PolicyWeights,
    obs_windows: np.ndarray,
    labels: np.ndarray,
    stats: NormStats,
) -> np.ndarray:
    network = weights.network
    z, cache = network.forward(weights.phi, _inputs(weights, obs_windows, stats))
    return network.backward(weights.phi, cache, (z - labels) / len(labels))


def train_policy(
    weights: PolicyWeights,
    buffer: ImitationBuffer,
    stats: NormStats,
    epochs: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> PolicyWeights:
    """
    Minibatch SGD on the imitation loss over the whole aggregated dataset.

    Raises:
        EmptyBufferError: the dataset holds no labelled pairs
    """
    if len(buffer) == 0:
        logger.error("Cannot train the policy on an empty dataset")
        raise EmptyBufferError("imitation dataset is empty")
    cfg = weights.config
    epochs = cfg.epochs if epochs is None else epochs
    rng = rng if rng is not None else np.random.default_rng(0)
    windows, labels = buffer.arrays()
    phi, curve = sgd_epochs(
        weights.network,
        weights.phi,
        _inputs(weights, windows, stats),
        labels,
        cfg.learning_rate,
        cfg.batch_size,
        epochs,
        rng,
    )
    if curve:
        logger.info(
            f"Trained policy for {epochs} epochs on {len(buffer)} pairs, "
            f"loss {curve[-1]:.6g}",
            extra={"epochs": epochs, "loss": curve[-1]},
        )
    return PolicyWeights(cfg, phi)


def save_policy(
    path: Union[str, Path],
    weights: PolicyWeights,
    stats: Optional[NormStats] = None,
) -> None:
    save_weights(path, weights.config, weights.phi, stats, kind="policy")


def load_policy(
    path: Union[str, Path],
) -> tuple[PolicyWeights, Optional[NormStats]]:
    config, phi, stats = read_weights(path, kind="policy")
    weights = PolicyWeights(PolicyConfig(**config), phi)
    if phi.size != weights.network.layout.size:
        raise CheckpointError(f"{path}: parameter count does not match config")
    return weights, stats
