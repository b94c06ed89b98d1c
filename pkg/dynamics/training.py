"""Minibatch SGD for window networks."""

from typing import NamedTuple, Optional, Union

import numpy as np

from dynamics.model import (
    ModelConfig,
    ModelWeights,
    loss_and_grad_arrays,
    batch_inputs,
    normalized_targets,
)
from dynamics.network import WindowNetwork
from errors import ConfigError, NoWindowsError
from experience.buffer import (
    BufferSnapshot,
    ExperienceBuffer,
    WindowSet,
    compute_norm_stats,
    make_windows,
    split,
)
from experience.normalization import NormStats
from logger.logger import get_logger

logger = get_logger(__name__)


class TrainResult(NamedTuple):
    weights: ModelWeights
    train_curve: list[float]
    val_loss: float


def sgd_epochs(
    network: WindowNetwork,
    theta: np.ndarray,
    x: np.ndarray,
    target: np.ndarray,
    learning_rate: float,
    batch_size: int,
    epochs: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, list[float]]:
    """
    Plain SGD, reshuffled every epoch with `rng`.

    Returns:
        (new parameters, per-epoch sample-weighted mean minibatch loss)
    """
    theta = theta.copy()
    curve: list[float] = []
    n = len(x)
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            value, grad = loss_and_grad_arrays(network, theta, x[idx], target[idx])
            theta -= learning_rate * grad
            total += value * len(idx)
        curve.append(total / n)
        logger.debug(
            f"Epoch {epoch + 1}/{epochs} train loss {curve[-1]:.6g}",
            extra={"epoch": epoch + 1, "loss": curve[-1]},
        )
    return theta, curve


def train(
    weights: ModelWeights,
    buffer: Union[ExperienceBuffer, BufferSnapshot, WindowSet],
    config: Optional[ModelConfig] = None,
    *,
    stats: Optional[NormStats] = None,
    rng: Optional[np.random.Generator] = None,
) -> TrainResult:
    """
    Fit the dynamics model on the chronological training split of the
    buffer's windows and report the validation loss.

    `config` overrides the optimisation settings (learning rate, batch size,
    epochs, split); its network shape must equal the weights'. Statistics
    default to the buffer's; pass them explicitly when `buffer` is already a
    WindowSet.

    Raises:
        NoWindowsError: the buffer yields no window of the model's length
    """
    config = config or weights.config
    if (
        config.network_spec() != weights.config.network_spec()
        or config.clock_period != weights.config.clock_period
    ):
        raise ConfigError("training config does not match the model shape")
    rng = rng if rng is not None else np.random.default_rng(0)

    if isinstance(buffer, WindowSet):
        windows = buffer
        if stats is None:
            raise ValueError("stats are required when training on a WindowSet")
    else:
        windows = make_windows(buffer, config.window)
        if stats is None and len(windows) > 0:
            stats = compute_norm_stats(buffer)
    if len(windows) == 0:
        logger.error(f"No training windows of length {config.window}")
        raise NoWindowsError(
            f"buffer yields no windows of length {config.window}"
        )
    assert stats is not None

    train_set, val_set = split(windows, config.split_ratio)
    network = weights.network
    x = batch_inputs(weights.config, train_set, stats)
    target = normalized_targets(train_set, stats)
    theta, curve = sgd_epochs(
        network,
        weights.theta,
        x,
        target,
        config.learning_rate,
        config.batch_size,
        config.epochs,
        rng,
    )
    trained = weights.replace_theta(theta)

    if len(val_set) > 0:
        val_loss, _ = loss_and_grad_arrays(
            network,
            theta,
            batch_inputs(weights.config, val_set, stats),
            normalized_targets(val_set, stats),
            with_grad=False,
        )
    else:
        logger.warning("Validation split is empty; validation loss is NaN")
        val_loss = float("nan")

    logger.info(
        f"Trained dynamics for {config.epochs} epochs on {len(train_set)} "
        f"windows, train loss {curve[-1] if curve else float('nan'):.6g}, "
        f"validation loss {val_loss:.6g}",
        extra={"epochs": config.epochs, "val_loss": val_loss},
    )
    return TrainResult(trained, curve, val_loss)
