"""Shaped reward and comfort-band constraint evaluation."""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from errors import ConfigError
from plant.signals import P_HVAC, P_ITE, T_EAST, T_WEST, Observation


@dataclass(frozen=True)
class RewardParams:
    lambda_1: float = 0.5
    lambda_2: float = 0.1
    lambda_p: float = 1e-5
    T_C: float = 23.5
    T_min: float = 22.0
    T_max: float = 25.0
    gamma: float = 1.0

    def __post_init__(self) -> None:
        if min(self.lambda_1, self.lambda_2, self.lambda_p) < 0:
            raise ConfigError("reward weights must be non-negative")
        if not self.T_min < self.T_C < self.T_max:
            raise ConfigError("reward band must satisfy T_min < T_C < T_max")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must be in [0, 1]")


class RewardBreakdown(NamedTuple):
    r: float
    r_T: float
    r_P: float
    violation_west: bool
    violation_east: bool


def reward_terms(
    obs: np.ndarray, params: RewardParams
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Vectorised reward over observation arrays of shape (..., 5).

    Returns:
        (r, r_T, r_P, violations) where violations has shape (..., 2) for
        (west, east)
    """
    temps = obs[..., [T_WEST, T_EAST]]
    hinge = np.maximum(params.T_min - temps, 0.0) + np.maximum(
        temps - params.T_max, 0.0
    )
    r_T = -np.sum(
        np.exp(-params.lambda_1 * (temps - params.T_C) ** 2)
        + params.lambda_2 * hinge,
        axis=-1,
    )
    r_P = -(obs[..., P_ITE] + obs[..., P_HVAC])
    r = r_T + params.lambda_p * r_P
    return r, r_T, r_P, band_violations(obs, params)


def band_violations(
    obs: np.ndarray, params: RewardParams, margin: float = 0.0
) -> np.ndarray:
    """
    (..., 2) flags of zones outside [T_min + margin, T_max - margin].

    Raises:
        ConfigError: the margin leaves no band
    """
    low, high = params.T_min + margin, params.T_max - margin
    if not low < high:
        raise ConfigError(f"band margin {margin} leaves no comfort band")
    temps = obs[..., [T_WEST, T_EAST]]
    return (temps < low) | (temps > high)


def reward(obs: Observation, params: RewardParams) -> RewardBreakdown:
    r, r_T, r_P, violations = reward_terms(obs.to_array(), params)
    return RewardBreakdown(
        r=float(r),
        r_T=float(r_T),
        r_P=float(r_P),
        violation_west=bool(violations[0]),
        violation_east=bool(violations[1]),
    )
