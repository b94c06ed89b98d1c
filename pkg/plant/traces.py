"""Weather and IT-load traces: CSV loading and synthetic generation."""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
import polars as pl

from errors import TraceParseError, TraceValidationError
from logger.logger import get_logger

logger = get_logger(__name__)

MINUTES_PER_DAY = 1440

TraceLabel = Literal["weather", "ite-load"]

REQUIRED_COLUMNS: dict[str, tuple[str, ...]] = {
    "weather": ("minute", "T_o_C", "W_o"),
    "ite-load": ("minute", "watts"),
}

# (daily mean °C, half diurnal swing °C, humidity ratio lb/lb)
WEATHER_PRESETS: dict[str, tuple[float, float, float]] = {
    "mild": (15.0, 5.0, 0.0075),
    "cold": (6.0, 4.0, 0.0040),
    "hot": (28.0, 6.0, 0.0120),
    "continental": (12.0, 9.0, 0.0065),
}

# Table of (start hour, amplitude) for the daily ITE schedule.
ITE_SCHEDULE = ((0.0, 0.50), (6.0, 0.75), (8.0, 1.00), (18.0, 0.80))

SeedLike = Union[int, np.random.Generator, None]


@dataclass(frozen=True)
class Trace:
    """
    Time-indexed records at a fixed timestep.

    `minutes` is the time index; `columns` maps column names (without the
    index) to value arrays of the same length.
    """

    minutes: np.ndarray
    columns: dict[str, np.ndarray] = field(default_factory=dict)
    dt: float = 1.0
    label: str = "weather"

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise TraceValidationError("trace dt must be positive")
        if len(self.minutes) == 0:
            raise TraceValidationError(f"{self.label} trace is empty")
        if np.any(np.diff(self.minutes) <= 0):
            raise TraceValidationError(
                f"{self.label} trace time index is not strictly increasing"
            )
        for name, values in self.columns.items():
            if len(values) != len(self.minutes):
                raise TraceValidationError(
                    f"column {name} has {len(values)} rows, "
                    f"expected {len(self.minutes)}"
                )

    def __len__(self) -> int:
        return len(self.minutes)

    def column(self, name: str) -> np.ndarray:
        return self.columns[name]

    @property
    def days(self) -> float:
        return len(self) * self.dt / MINUTES_PER_DAY

    def resample(self, dt: float) -> "Trace":
        """Step-hold this trace onto a finer grid whose dt divides ours."""
        if dt == self.dt:
            return self
        factor = self.dt / dt
        if factor < 1 or abs(factor - round(factor)) > 1e-9:
            raise TraceValidationError(
                f"cannot resample a dt={self.dt} trace to dt={dt}"
            )
        repeat = int(round(factor))
        offsets = np.arange(repeat) * dt
        minutes = (self.minutes[:, None] + offsets[None, :]).reshape(-1)
        columns = {
            name: np.repeat(values, repeat)
            for name, values in self.columns.items()
        }
        return Trace(minutes, columns, dt=dt, label=self.label)

    def to_frame(self) -> pl.DataFrame:
        return pl.DataFrame({"minute": self.minutes, **self.columns})


def _rng(seed: SeedLike) -> np.random.Generator:
    return np.random.default_rng(seed)


def ite_amplitude(minutes: np.ndarray) -> np.ndarray:
    """Normalised ITE amplitude for each minute-of-day."""
    hours = (np.asarray(minutes, dtype=np.float64) % MINUTES_PER_DAY) / 60.0
    amplitude = np.empty_like(hours)
    for start, value in ITE_SCHEDULE:
        amplitude[hours >= start] = value
    return amplitude


def gen_ite_load(
    day_count: int,
    peak_watts: float,
    rng_seed: SeedLike = None,
    noise: float = 0.05,
    dt: float = 1.0,
) -> Trace:
    """
    Generate an IT-equipment load trace: peak × schedule amplitude ×
    (1 + uniform noise of half-width `noise`).
    """
    if day_count < 1:
        raise TraceValidationError("day_count must be at least 1")
    if peak_watts <= 0:
        raise TraceValidationError("peak_watts must be positive")
    if noise < 0:
        raise TraceValidationError("noise half-width must be non-negative")
    minutes = np.arange(0.0, day_count * MINUTES_PER_DAY, dt)
    eps = _rng(rng_seed).uniform(-noise, noise, size=len(minutes))
    watts = peak_watts * ite_amplitude(minutes) * (1.0 + eps)
    logger.debug(
        f"Generated ITE trace: {day_count} days, peak {peak_watts:.0f} W"
    )
    return Trace(minutes, {"watts": watts}, dt=dt, label="ite-load")


def gen_weather(
    day_count: int,
    rng_seed: SeedLike = None,
    preset: str = "mild",
    dt: float = 1.0,
    mean: Optional[float] = None,
    amplitude: Optional[float] = None,
    humidity: Optional[float] = None,
    day_jitter: float = 2.0,
) -> Trace:
    """
    Synthetic outdoor conditions: a diurnal sinusoid peaking at 15:00 plus a
    random day-to-day offset interpolated linearly between day midpoints.
    """
    if day_count < 1:
        raise TraceValidationError("day_count must be at least 1")
    if preset not in WEATHER_PRESETS:
        raise TraceValidationError(f"unknown weather preset {preset!r}")
    base_mean, base_amp, base_hum = WEATHER_PRESETS[preset]
    mean = base_mean if mean is None else mean
    amplitude = base_amp if amplitude is None else amplitude
    humidity = base_hum if humidity is None else humidity

    minutes = np.arange(0.0, day_count * MINUTES_PER_DAY, dt)
    hours = (minutes % MINUTES_PER_DAY) / 60.0
    offsets = _rng(rng_seed).uniform(-day_jitter, day_jitter, size=day_count + 1)
    midpoints = (np.arange(day_count + 1) - 0.5) * MINUTES_PER_DAY
    daily = np.interp(minutes, midpoints, offsets)
    T_o = mean + daily + amplitude * np.sin(2.0 * np.pi * (hours - 9.0) / 24.0)
    W_o = np.full(len(minutes), humidity)
    return Trace(minutes, {"T_o_C": T_o, "W_o": W_o}, dt=dt, label="weather")


def _infer_label(columns: list[str]) -> str:
    return "ite-load" if "watts" in columns else "weather"


def load_trace(
    path: Union[str, Path],
    label: Optional[TraceLabel] = None,
    dt: Optional[float] = None,
) -> Trace:
    """
    Load a comma-separated trace file.

    Weather files carry `minute,T_o_C,W_o`; load files `minute,watts`.

    Args:
        path: CSV file with a header row
        label: "weather" or "ite-load"; inferred from the header if omitted
        dt: Timestep in minutes; required for single-row files, otherwise
            checked against the spacing of the `minute` column

    Raises:
        TraceParseError: missing column or a malformed value (with line)
        TraceValidationError: empty file, bad time index or dt
    """
    path = Path(path)
    if not path.exists():
        logger.error(f"Trace file not found: {path}")
        raise TraceValidationError(f"trace file not found: {path}")

    try:
        df = pl.read_csv(path, infer_schema=False)
    except pl.exceptions.NoDataError:
        raise TraceValidationError(f"trace file {path} is empty")
    except pl.exceptions.PolarsError as e:
        logger.error(f"Failed to parse trace {path}: {e}")
        raise TraceParseError(f"cannot parse {path}: {e}")

    label = label or _infer_label(df.columns)  # type: ignore[assignment]
    if label not in REQUIRED_COLUMNS:
        raise TraceValidationError(f"unknown trace label {label!r}")
    for column in REQUIRED_COLUMNS[label]:
        if column not in df.columns:
            logger.error(f"Trace {path} has no column {column}")
            raise TraceParseError(
                f"{path}: missing column {column}", column=column
            )
    if df.height == 0:
        raise TraceValidationError(f"trace file {path} has no data rows")

    values: dict[str, np.ndarray] = {}
    for column in REQUIRED_COLUMNS[label]:
        raw = df[column]
        parsed = raw.str.strip_chars().cast(pl.Float64, strict=False)
        bad = (parsed.is_null() | ~parsed.is_finite()).arg_true()
        if len(bad) > 0:
            # header is line 1
            line = int(bad[0]) + 2
            logger.error(f"Malformed value in {path} line {line}, {column}")
            raise TraceParseError(
                f"{path}:{line}: malformed or missing value in column "
                f"{column}",
                line=line,
                column=column,
            )
        values[column] = parsed.to_numpy().astype(np.float64)

    minutes = values.pop("minute")
    if np.any(np.diff(minutes) <= 0):
        raise TraceValidationError(
            f"{path}: minute column is not strictly increasing"
        )
    if len(minutes) == 1:
        if dt is None:
            raise TraceValidationError(
                f"{path}: dt must be declared for a single-row trace"
            )
    else:
        spacing = np.diff(minutes)
        declared = spacing[0] if dt is None else dt
        if not np.allclose(spacing, declared):
            raise TraceValidationError(
                f"{path}: rows are not spaced at dt={declared} minutes"
            )
        dt = float(declared)

    if label == "weather" and np.any(values["W_o"] < 0):
        raise TraceValidationError(f"{path}: negative humidity ratio")
    if label == "ite-load" and np.any(values["watts"] < 0):
        raise TraceValidationError(f"{path}: negative load")

    logger.info(f"Loaded {label} trace {path}: {len(minutes)} rows, dt={dt}")
    return Trace(minutes, values, dt=float(dt), label=label)
