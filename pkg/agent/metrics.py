"""Episode log schema and daily evaluation metrics."""

from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
import polars as pl

from logger.logger import get_logger
from mpc.reward import RewardParams
from plant.signals import ACT_FIELDS, OBS_FIELDS
from plant.traces import MINUTES_PER_DAY

logger = get_logger(__name__)

EPISODE_LOG_COLUMNS = (
    "step",
    *OBS_FIELDS,
    *ACT_FIELDS,
    "reward",
    "violation_west",
    "violation_east",
)

EPISODE_LOG_SCHEMA: dict[str, Any] = {
    "step": pl.Int64,
    **{name: pl.Float64 for name in (*OBS_FIELDS, *ACT_FIELDS, "reward")},
    "violation_west": pl.Boolean,
    "violation_east": pl.Boolean,
}


def steps_per_day(control_interval: float) -> int:
    return int(round(MINUTES_PER_DAY / control_interval))


def episode_log_frame(rows: list[dict[str, Any]]) -> pl.DataFrame:
    return pl.DataFrame(rows, schema=EPISODE_LOG_SCHEMA)


def _whole_days(log: pl.DataFrame, per_day: int, what: str) -> int:
    days, partial = divmod(log.height, per_day)
    if partial:
        logger.warning(
            f"Episode log ends with a partial day of {partial} steps; "
            f"excluded from {what}"
        )
    return days


def daily_tvr(
    log: pl.DataFrame, params: RewardParams, per_day: int = 96
) -> np.ndarray:
    """
    Per whole day, the fraction of control steps where either zone is
    outside [T_min, T_max].
    """
    days = _whole_days(log, per_day, "daily TVR")
    n = days * per_day
    temps = log.select("T_west", "T_east").to_numpy()[:n]
    violating = np.any((temps < params.T_min) | (temps > params.T_max), axis=1)
    return violating.reshape(days, per_day).mean(axis=1)


def daily_avg_power(log: pl.DataFrame, per_day: int = 96) -> np.ndarray:
    """Per whole day, the mean of P_ite + P_hvac in watts."""
    days = _whole_days(log, per_day, "daily average power")
    n = days * per_day
    power = log.select("P_ite", "P_hvac").to_numpy()[:n]
    return power.sum(axis=1).reshape(days, per_day).mean(axis=1)


@dataclass
class MetricsReport:
    """
    Outcome of one agent run: daily metrics recomputable from the episode
    log, per-round model diagnostics and the raw run tables.
    """

    mode: str
    daily_power: np.ndarray
    daily_tvr: np.ndarray
    cumulative_reward: float
    round_deviation: list[float] = field(default_factory=list)
    agreement_mse: list[float] = field(default_factory=list)
    episode_log: Optional[pl.DataFrame] = None
    rounds: Optional[pl.DataFrame] = None
    plan_log: Optional[pl.DataFrame] = None

    @classmethod
    def from_log(
        cls,
        mode: str,
        log: pl.DataFrame,
        params: RewardParams,
        per_day: int = 96,
        rounds: Optional[pl.DataFrame] = None,
        plan_log: Optional[pl.DataFrame] = None,
    ) -> "MetricsReport":
        deviation: list[float] = []
        agreement: list[float] = []
        if rounds is not None and rounds.height > 0:
            deviation = rounds["val_deviation"].to_list()
            agreement = [
                v for v in rounds["agreement_mse"].to_list() if v is not None
            ]
        return cls(
            mode=mode,
            daily_power=daily_avg_power(log, per_day),
            daily_tvr=daily_tvr(log, params, per_day),
            cumulative_reward=float(log["reward"].sum()) if log.height else 0.0,
            round_deviation=deviation,
            agreement_mse=agreement,
            episode_log=log,
            rounds=rounds,
            plan_log=plan_log,
        )

    @property
    def days(self) -> int:
        return len(self.daily_power)

    @property
    def energy_kwh(self) -> float:
        return float(np.sum(self.daily_power) * 24.0 / 1000.0)

    def daily_frame(self) -> pl.DataFrame:
        return pl.DataFrame(
            {
                "day": np.arange(self.days, dtype=np.int64),
                "avg_power_w": self.daily_power,
                "tvr": self.daily_tvr,
            }
        )

    def summary_frame(self) -> pl.DataFrame:
        finite = [d for d in self.round_deviation if d is not None and np.isfinite(d)]
        return pl.DataFrame(
            {
                "mode": [self.mode],
                "days": [self.days],
                "mean_tvr": [
                    float(np.mean(self.daily_tvr)) if self.days else None
                ],
                "mean_power_w": [
                    float(np.mean(self.daily_power)) if self.days else None
                ],
                "energy_kwh": [self.energy_kwh],
                "cumulative_reward": [self.cumulative_reward],
                "mean_deviation": [float(np.mean(finite)) if finite else None],
                "mean_agreement_mse": [
                    float(np.mean(self.agreement_mse))
                    if self.agreement_mse
                    else None
                ],
            }
        )
