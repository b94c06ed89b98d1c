"""Per-dimension standardisation statistics."""

from dataclasses import dataclass
from typing import Any

import numpy as np

from errors import DimensionMismatchError

DEFAULT_EPSILON = 1e-6


@dataclass(frozen=True)
class NormStats:
    """
    Mean and population standard deviation over the concatenated
    (observation, action) dimensions, plus the RMS one-step change of each
    observation dimension used to scale delta targets.
    """

    mean: np.ndarray
    std: np.ndarray
    delta_scale: np.ndarray
    obs_dim: int
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self) -> None:
        if self.mean.shape != self.std.shape:
            raise DimensionMismatchError("mean and std shapes differ")
        if self.delta_scale.shape != (self.obs_dim,):
            raise DimensionMismatchError("delta_scale must match obs_dim")

    @property
    def dim(self) -> int:
        return len(self.mean)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return normalize(x, self)

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return denormalize(x, self)

    def obs_part(self) -> "NormStats":
        return NormStats(
            mean=self.mean[: self.obs_dim],
            std=self.std[: self.obs_dim],
            delta_scale=self.delta_scale,
            obs_dim=self.obs_dim,
            epsilon=self.epsilon,
        )

    def act_part(self) -> "NormStats":
        act_dim = self.dim - self.obs_dim
        return NormStats(
            mean=self.mean[self.obs_dim :],
            std=self.std[self.obs_dim :],
            delta_scale=np.ones(act_dim),
            obs_dim=act_dim,
            epsilon=self.epsilon,
        )

    def to_arrays(self, prefix: str = "stats_") -> dict[str, Any]:
        return {
            f"{prefix}mean": self.mean,
            f"{prefix}std": self.std,
            f"{prefix}delta_scale": self.delta_scale,
            f"{prefix}meta": np.array([self.obs_dim, self.epsilon]),
        }

    @classmethod
    def from_arrays(
        cls, arrays: Any, prefix: str = "stats_"
    ) -> "NormStats":
        obs_dim, epsilon = arrays[f"{prefix}meta"]
        return cls(
            mean=np.array(arrays[f"{prefix}mean"], dtype=np.float64),
            std=np.array(arrays[f"{prefix}std"], dtype=np.float64),
            delta_scale=np.array(
                arrays[f"{prefix}delta_scale"], dtype=np.float64
            ),
            obs_dim=int(obs_dim),
            epsilon=float(epsilon),
        )

    @classmethod
    def identity(cls, obs_dim: int, act_dim: int) -> "NormStats":
        dim = obs_dim + act_dim
        return cls(np.zeros(dim), np.ones(dim), np.ones(obs_dim), obs_dim)


def _check_dim(x: np.ndarray, stats: NormStats) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != (stats.dim,):
        raise DimensionMismatchError(
            f"expected trailing dimension {stats.dim}, got shape {x.shape}"
        )
    return x


def normalize(x: np.ndarray, stats: NormStats) -> np.ndarray:
    """x' = (x - mean) / std along the last axis."""
    x = _check_dim(x, stats)
    return (x - stats.mean) / stats.std


def denormalize(x: np.ndarray, stats: NormStats) -> np.ndarray:
    x = _check_dim(x, stats)
    return x * stats.std + stats.mean


def compute_stats(
    obs: np.ndarray,
    act: np.ndarray,
    consecutive: np.ndarray,
    epsilon: float = DEFAULT_EPSILON,
) -> NormStats:
    """
    Args:
        obs: (N, obs_dim) observations in insertion order
        act: (N, act_dim) actions
        consecutive: (N-1,) mask, True where row i+1 directly follows row i
            within the same episode
    """
    x = np.concatenate([obs, act], axis=1)
    mean = x.mean(axis=0)
    std = np.maximum(x.std(axis=0), epsilon)
    deltas = (obs[1:] - obs[:-1])[consecutive]
    if len(deltas) == 0:
        delta_scale = np.ones(obs.shape[1])
    else:
        delta_scale = np.maximum(np.sqrt(np.mean(deltas**2, axis=0)), epsilon)
    return NormStats(mean, std, delta_scale, obs.shape[1], epsilon)
