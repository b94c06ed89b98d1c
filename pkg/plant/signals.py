"""Observation and raw-action vectors exchanged with the plant."""

from dataclasses import astuple, dataclass

import numpy as np

OBS_FIELDS = ("T_out", "T_west", "T_east", "P_ite", "P_hvac")
ACT_FIELDS = ("TS_west", "TS_east", "F_west", "F_east")
OBS_DIM = len(OBS_FIELDS)
ACT_DIM = len(ACT_FIELDS)

# Column positions inside observation arrays.
T_WEST, T_EAST, P_ITE, P_HVAC = 1, 2, 3, 4


@dataclass(frozen=True)
class Observation:
    """Interval-averaged measurements: °C for temperatures, W for powers."""

    T_out: float
    T_west: float
    T_east: float
    P_ite: float
    P_hvac: float

    def to_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)

    @classmethod
    def from_array(cls, values: np.ndarray) -> "Observation":
        return cls(*(float(v) for v in np.asarray(values).reshape(-1)))

    @property
    def P_total(self) -> float:
        return self.P_ite + self.P_hvac


@dataclass(frozen=True)
class RawAction:
    """Zone setpoints (°C) and normalised supply-fan scales."""

    TS_west: float
    TS_east: float
    F_west: float
    F_east: float

    def to_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)

    @classmethod
    def from_array(cls, values: np.ndarray) -> "RawAction":
        return cls(*(float(v) for v in np.asarray(values).reshape(-1)))


