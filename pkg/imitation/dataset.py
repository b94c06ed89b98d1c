"""Aggregated (observation window, planner label) pairs."""

from pathlib import Path
from typing import Union

import numpy as np
import pyarrow as pa
import pyarrow.parquet as pq

from errors import CheckpointError, DimensionMismatchError
from experience.buffer import BUFFER_FORMAT_VERSION, DEFAULT_CAPACITY
from logger.logger import get_logger
from plant.signals import ACT_DIM, OBS_DIM

logger = get_logger(__name__)


class ImitationBuffer:
    """
    Fixed-capacity FIFO of observation windows with normalised action labels.

    Labels stay in [-1, 1] z-space; raw actions are only ever produced by
    the safety decoder.
    """

    def __init__(
        self,
        window: int,
        capacity: int = DEFAULT_CAPACITY,
        obs_dim: int = OBS_DIM,
        act_dim: int = ACT_DIM,
    ):
        if capacity < 1:
            raise ValueError("capacity must be at least 1")
        self.window = window
        self.capacity = capacity
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self._windows = np.zeros((capacity, window, obs_dim))
        self._labels = np.zeros((capacity, act_dim))
        self._ptr = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def append(self, obs_window: np.ndarray, label: np.ndarray) -> None:
        obs_window = np.asarray(obs_window, dtype=np.float64)
        label = np.asarray(label, dtype=np.float64)
        if obs_window.shape != (self.window, self.obs_dim):
            raise DimensionMismatchError(
                f"window shape {obs_window.shape} != "
                f"{(self.window, self.obs_dim)}"
            )
        if label.shape != (self.act_dim,):
            raise DimensionMismatchError(f"label shape {label.shape}")
        self._windows[self._ptr] = obs_window
        self._labels[self._ptr] = label
        self._ptr = (self._ptr + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(windows, labels), oldest pair first."""
        start = (self._ptr - self._size) % self.capacity
        order = (start + np.arange(self._size)) % self.capacity
        return self._windows[order].copy(), self._labels[order].copy()

    def save(self, path: Union[str, Path]) -> None:
        windows, labels = self.arrays()
        width = self.window * self.obs_dim
        table = pa.table(
            {
                "window": pa.FixedSizeListArray.from_arrays(
                    pa.array(windows.reshape(-1), pa.float64()), width
                ),
                "label": pa.FixedSizeListArray.from_arrays(
                    pa.array(labels.reshape(-1), pa.float64()), self.act_dim
                ),
            }
        ).replace_schema_metadata(
            {
                "format_version": BUFFER_FORMAT_VERSION,
                "kind": "imitation",
                "capacity": str(self.capacity),
                "window": str(self.window),
                "obs_dim": str(self.obs_dim),
                "act_dim": str(self.act_dim),
            }
        )
        pq.write_table(table, Path(path))
        logger.debug(f"Saved {len(self)} imitation pairs to {path}")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ImitationBuffer":
        table = pq.read_table(Path(path))
        meta = {
            k.decode(): v.decode()
            for k, v in (table.schema.metadata or {}).items()
        }
        if (
            meta.get("kind") != "imitation"
            or meta.get("format_version") != BUFFER_FORMAT_VERSION
        ):
            raise CheckpointError(
                f"{path} is not a version {BUFFER_FORMAT_VERSION} "
                "imitation dataset"
            )
        buffer = cls(
            window=int(meta["window"]),
            capacity=int(meta["capacity"]),
            obs_dim=int(meta["obs_dim"]),
            act_dim=int(meta["act_dim"]),
        )
        n = table.num_rows
        if n == 0:
            return buffer
        windows = (
            table.column("window").combine_chunks().flatten().to_numpy()
        ).reshape(n, buffer.window, buffer.obs_dim)
        labels = (
            table.column("label").combine_chunks().flatten().to_numpy()
        ).reshape(n, buffer.act_dim)
        for window, label in zip(windows, labels):
            buffer.append(window, label)
        return buffer


def aggregate(
    buffer: ImitationBuffer, obs_window: np.ndarray, mpc_action_z: np.ndarray
) -> ImitationBuffer:
    """Append one planner-labelled pair, evicting the oldest when full."""
    buffer.append(obs_window, mpc_action_z)
    return buffer
