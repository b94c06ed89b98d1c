"""Safety-constrained action decoding."""

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from errors import ActionBoundsError, ConfigError
from logger.logger import get_logger
from plant.signals import RawAction

logger = get_logger(__name__)

BOUND_TOLERANCE = 1e-9


@dataclass(frozen=True)
class SafeActionSpace:
    """
    Box bounds plus a per-component rate limit. Every raw action reaches the
    plant through `decode`, so executed actions always satisfy both.
    """

    a_min: tuple[float, ...] = (13.5, 13.5, 2.5, 2.5)
    a_max: tuple[float, ...] = (23.5, 23.5, 10.0, 10.0)
    delta: tuple[float, ...] = field(default=(1.0, 1.0, 1.0, 1.0))

    def __post_init__(self) -> None:
        if not len(self.a_min) == len(self.a_max) == len(self.delta):
            raise ConfigError("action bounds and delta differ in length")
        if np.any(np.asarray(self.a_min) >= np.asarray(self.a_max)):
            raise ConfigError("a_min must be below a_max componentwise")
        if np.any(np.asarray(self.delta) <= 0):
            raise ConfigError("delta must be positive")

    @property
    def dim(self) -> int:
        return len(self.delta)

    @property
    def low(self) -> np.ndarray:
        return np.asarray(self.a_min, dtype=np.float64)

    @property
    def high(self) -> np.ndarray:
        return np.asarray(self.a_max, dtype=np.float64)

    @property
    def step(self) -> np.ndarray:
        return np.asarray(self.delta, dtype=np.float64)

    def contains(self, action: np.ndarray) -> bool:
        action = np.asarray(action, dtype=np.float64)
        return bool(
            np.all(action >= self.low - BOUND_TOLERANCE)
            and np.all(action <= self.high + BOUND_TOLERANCE)
        )

    def check(self, action: np.ndarray) -> None:
        if not self.contains(action):
            logger.error(f"Action {np.asarray(action).tolist()} out of bounds")
            raise ActionBoundsError(
                f"action {np.asarray(action).tolist()} outside "
                f"[{list(self.a_min)}, {list(self.a_max)}]"
            )

    def decode(self, z: np.ndarray, a_prev: np.ndarray) -> np.ndarray:
        """clip(delta * z + a_prev, a_min, a_max), broadcasting over batches."""
        return np.clip(self.step * z + a_prev, self.low, self.high)

    def decode_sequences(self, z_seq: np.ndarray, a_prev: np.ndarray) -> np.ndarray:
        """
        Decode (..., H, dim) normalised sequences, each step relative to the
        previously decoded action.
        """
        out = np.empty(z_seq.shape)
        a = np.broadcast_to(a_prev, z_seq[..., 0, :].shape)
        for h in range(z_seq.shape[-2]):
            a = self.decode(z_seq[..., h, :], a)
            out[..., h, :] = a
        return out

    def is_safe_transition(self, a_prev: np.ndarray, a: np.ndarray) -> bool:
        return self.contains(a) and bool(
            np.all(np.abs(np.asarray(a) - a_prev) <= self.step + BOUND_TOLERANCE)
        )


def decode_action(
    z: Union[np.ndarray, tuple[float, ...]],
    a_prev: RawAction,
    space: SafeActionSpace,
) -> RawAction:
    """
    Raises:
        ActionBoundsError: a_prev lies outside the action bounds or z
            outside [-1, 1]
    """
    z = np.asarray(z, dtype=np.float64)
    if np.any(np.abs(z) > 1.0 + BOUND_TOLERANCE):
        raise ActionBoundsError(f"normalised action {z.tolist()} outside [-1, 1]")
    prev = a_prev.to_array()
    space.check(prev)
    return RawAction.from_array(space.decode(z, prev))
