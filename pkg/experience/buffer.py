"""FIFO trajectory store and sliding-window sample extraction."""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence, TypeVar, Union, overload

import numpy as np
import pyarrow as pa
import pyarrow.parquet as pq

from errors import CheckpointError, EmptyBufferError
from experience.normalization import DEFAULT_EPSILON, NormStats, compute_stats
from logger.logger import get_logger
from plant.signals import (
    ACT_DIM,
    ACT_FIELDS,
    OBS_DIM,
    OBS_FIELDS,
    Observation,
    RawAction,
)

logger = get_logger(__name__)

BUFFER_FORMAT_VERSION = "1"
DEFAULT_CAPACITY = 11_520


@dataclass(frozen=True)
class TrajectoryStep:
    o: Union[Observation, np.ndarray]
    a: Union[RawAction, np.ndarray]
    episode_id: int
    step_index: int

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        o = self.o.to_array() if isinstance(self.o, Observation) else self.o
        a = self.a.to_array() if isinstance(self.a, RawAction) else self.a
        return np.asarray(o, dtype=np.float64), np.asarray(a, dtype=np.float64)


class BufferSnapshot(NamedTuple):
    """Copy of the buffer contents, oldest step first."""

    obs: np.ndarray
    act: np.ndarray
    episode: np.ndarray
    step: np.ndarray

    def consecutive(self) -> np.ndarray:
        """(N-1,) mask: row i+1 directly follows row i in one episode."""
        return (self.episode[1:] == self.episode[:-1]) & (
            self.step[1:] == self.step[:-1] + 1
        )


class ExperienceBuffer:
    """
    Fixed-capacity ring of executed (observation, action) steps.

    Single Responsibility: ordered storage with oldest-first eviction.
    """

    def __init__(
        self,
        capacity: int = DEFAULT_CAPACITY,
        obs_dim: int = OBS_DIM,
        act_dim: int = ACT_DIM,
    ):
        if capacity < 1:
            raise ValueError("capacity must be at least 1")
        self.capacity = capacity
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self._obs = np.zeros((capacity, obs_dim))
        self._act = np.zeros((capacity, act_dim))
        self._episode = np.zeros(capacity, dtype=np.int64)
        self._step = np.zeros(capacity, dtype=np.int64)
        self._ptr = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def __repr__(self) -> str:
        return f"ExperienceBuffer({self._size}/{self.capacity})"

    def append(self, step: TrajectoryStep) -> "ExperienceBuffer":
        o, a = step.arrays()
        if self._size > 0:
            last = (self._ptr - 1) % self.capacity
            if (
                self._episode[last] == step.episode_id
                and step.step_index <= self._step[last]
            ):
                raise ValueError(
                    f"step_index {step.step_index} does not increase within "
                    f"episode {step.episode_id}"
                )
        self._obs[self._ptr] = o
        self._act[self._ptr] = a
        self._episode[self._ptr] = step.episode_id
        self._step[self._ptr] = step.step_index
        self._ptr = (self._ptr + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)
        return self

    def extend(self, steps: Sequence[TrajectoryStep]) -> "ExperienceBuffer":
        for step in steps:
            self.append(step)
        return self

    def _order(self) -> np.ndarray:
        start = (self._ptr - self._size) % self.capacity
        return (start + np.arange(self._size)) % self.capacity

    def snapshot(self) -> BufferSnapshot:
        order = self._order()
        return BufferSnapshot(
            obs=self._obs[order].copy(),
            act=self._act[order].copy(),
            episode=self._episode[order].copy(),
            step=self._step[order].copy(),
        )

    def latest(self, count: int) -> BufferSnapshot:
        """The newest `count` steps (fewer if the buffer is shorter)."""
        order = self._order()[-count:] if count > 0 else np.array([], int)
        return BufferSnapshot(
            obs=self._obs[order].copy(),
            act=self._act[order].copy(),
            episode=self._episode[order].copy(),
            step=self._step[order].copy(),
        )

    def _column_names(self) -> tuple[list[str], list[str]]:
        obs_names = (
            list(OBS_FIELDS)
            if self.obs_dim == OBS_DIM
            else [f"o{i}" for i in range(self.obs_dim)]
        )
        act_names = (
            list(ACT_FIELDS)
            if self.act_dim == ACT_DIM
            else [f"a{i}" for i in range(self.act_dim)]
        )
        return obs_names, act_names

    def save(self, path: Union[str, Path]) -> None:
        snap = self.snapshot()
        obs_names, act_names = self._column_names()
        columns = {
            "episode_id": snap.episode,
            "step_index": snap.step,
            **{name: snap.obs[:, i] for i, name in enumerate(obs_names)},
            **{name: snap.act[:, i] for i, name in enumerate(act_names)},
        }
        table = pa.table(columns).replace_schema_metadata(
            {
                "format_version": BUFFER_FORMAT_VERSION,
                "kind": "experience",
                "capacity": str(self.capacity),
                "obs_dim": str(self.obs_dim),
                "act_dim": str(self.act_dim),
            }
        )
        pq.write_table(table, Path(path))
        logger.debug(f"Saved {len(self)} experience steps to {path}")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ExperienceBuffer":
        table = pq.read_table(Path(path))
        meta = {
            k.decode(): v.decode() for k, v in (table.schema.metadata or {}).items()
        }
        if meta.get("kind") != "experience":
            raise CheckpointError(f"{path} is not an experience buffer")
        if meta.get("format_version") != BUFFER_FORMAT_VERSION:
            raise CheckpointError(
                f"{path}: buffer format {meta.get('format_version')} "
                f"is not {BUFFER_FORMAT_VERSION}"
            )
        buffer = cls(
            capacity=int(meta["capacity"]),
            obs_dim=int(meta["obs_dim"]),
            act_dim=int(meta["act_dim"]),
        )
        if table.num_rows == 0:
            return buffer
        obs_names, act_names = buffer._column_names()
        data = table.to_pydict()
        obs = np.column_stack([data[name] for name in obs_names])
        act = np.column_stack([data[name] for name in act_names])
        for i in range(table.num_rows):
            buffer.append(
                TrajectoryStep(
                    obs[i], act[i], data["episode_id"][i], data["step_index"][i]
                )
            )
        return buffer


def compute_norm_stats(
    buffer: Union[ExperienceBuffer, BufferSnapshot],
    epsilon: float = DEFAULT_EPSILON,
) -> NormStats:
    """
    Population statistics over every stored step, recomputed from scratch.

    Raises:
        EmptyBufferError: the buffer holds no steps
    """
    snap = buffer.snapshot() if isinstance(buffer, ExperienceBuffer) else buffer
    if len(snap.obs) == 0:
        logger.error("Cannot compute normalisation statistics of empty buffer")
        raise EmptyBufferError("cannot compute statistics of an empty buffer")
    return compute_stats(snap.obs, snap.act, snap.consecutive(), epsilon)


@dataclass(frozen=True)
class WindowSample:
    obs_window: np.ndarray
    act_window: np.ndarray
    target: np.ndarray


class WindowSet:
    """
    Array-backed sequence of window samples.

    obs: (N, W, obs_dim), act: (N, W, act_dim), target: (N, obs_dim) one-step
    deltas o(t+1) - o(t), episode: (N,), steps: (N, W+1) step indices of the
    inputs and the target step.
    """

    def __init__(
        self,
        obs: np.ndarray,
        act: np.ndarray,
        target: np.ndarray,
        episode: np.ndarray,
        steps: np.ndarray,
    ):
        self.obs = obs
        self.act = act
        self.target = target
        self.episode = episode
        self.steps = steps

    def __len__(self) -> int:
        return len(self.target)

    @property
    def window(self) -> int:
        return self.obs.shape[1]

    @overload
    def __getitem__(self, index: int) -> WindowSample: ...

    @overload
    def __getitem__(self, index: slice) -> "WindowSet": ...

    def __getitem__(self, index):
        if isinstance(index, slice):
            return self.take(np.arange(len(self))[index])
        return WindowSample(self.obs[index], self.act[index], self.target[index])

    def take(self, indices: np.ndarray) -> "WindowSet":
        return WindowSet(
            self.obs[indices],
            self.act[indices],
            self.target[indices],
            self.episode[indices],
            self.steps[indices],
        )

    @property
    def last_obs(self) -> np.ndarray:
        return self.obs[:, -1, :]


def make_windows(
    buffer: Union[ExperienceBuffer, BufferSnapshot], W: int
) -> WindowSet:
    """
    Every W-step input window plus its one-step target drawn from a single
    consecutive run of steps. A run of length L yields max(0, L - W) samples.
    """
    if W < 1:
        raise ValueError("window length W must be at least 1")
    snap = buffer.snapshot() if isinstance(buffer, ExperienceBuffer) else buffer
    n = len(snap.obs)
    obs_dim, act_dim = snap.obs.shape[1], snap.act.shape[1]
    if n <= W:
        return WindowSet(
            np.zeros((0, W, obs_dim)),
            np.zeros((0, W, act_dim)),
            np.zeros((0, obs_dim)),
            np.zeros(0, dtype=np.int64),
            np.zeros((0, W + 1), dtype=np.int64),
        )

    run_id = np.concatenate([[0], np.cumsum(~snap.consecutive())])
    starts = np.arange(n - W)
    starts = starts[run_id[starts + W] == run_id[starts]]
    inputs = starts[:, None] + np.arange(W)[None, :]
    target = snap.obs[starts + W] - snap.obs[starts + W - 1]
    return WindowSet(
        obs=snap.obs[inputs],
        act=snap.act[inputs],
        target=target,
        episode=snap.episode[starts],
        steps=snap.step[np.concatenate([inputs, (starts + W)[:, None]], axis=1)],
    )


T = TypeVar("T", WindowSet, list)


def split(samples: T, ratio: float) -> tuple[T, T]:
    """Chronological split: the first ceil(ratio * N) samples train."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("split ratio must be in (0, 1)")
    n_train = math.ceil(ratio * len(samples) - 1e-9)
    return samples[:n_train], samples[n_train:]
