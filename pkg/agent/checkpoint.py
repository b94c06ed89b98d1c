"""Per-round run checkpoints."""

import json
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
import pendulum
import polars as pl

from dynamics.model import ModelWeights, load_model, save_model
from errors import CheckpointError
from experience.buffer import ExperienceBuffer
from experience.normalization import NormStats
from imitation.dataset import ImitationBuffer
from imitation.policy import PolicyWeights, load_policy, save_policy
from logger.logger import get_logger

logger = get_logger(__name__)

CHECKPOINT_FORMAT_VERSION = 2
STATE_FILE = "state.json"


@dataclass
class RunState:
    """Everything a run needs to continue exactly where it stopped."""

    buffer: ExperienceBuffer
    rngs: dict[str, np.random.Generator]
    round_index: int = 0
    dynamics: Optional[ModelWeights] = None
    policy: Optional[PolicyWeights] = None
    policy_stats: Optional[NormStats] = None
    imitation: Optional[ImitationBuffer] = None
    log_rows: list[dict[str, Any]] = field(default_factory=list)
    plan_rows: list[dict[str, Any]] = field(default_factory=list)
    round_rows: list[dict[str, Any]] = field(default_factory=list)


def spawn_rngs(seed: int, names: tuple[str, ...]) -> dict[str, np.random.Generator]:
    """Independent named generators derived from one seed."""
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {
        name: np.random.default_rng(child) for name, child in zip(names, children)
    }


def _table(rows: list[dict[str, Any]]) -> pl.DataFrame:
    return pl.DataFrame(rows)


def _rows(path: Path) -> list[dict[str, Any]]:
    if not path.exists():
        return []
    return pl.read_parquet(path).to_dicts()


def save_checkpoint(
    directory: Union[str, Path],
    state: RunState,
    env_state: dict[str, Any],
    fingerprint: str,
) -> bool:
    """
    Write the run state into `directory`, replacing any previous one.
    A failed write is logged and reported as False; the run goes on.
    """
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        # no state file until every part is written
        (directory / STATE_FILE).unlink(missing_ok=True)
        state.buffer.save(directory / "buffer.parquet")
        if state.dynamics is not None:
            save_model(directory / "dynamics.npz", state.dynamics)
        if state.policy is not None:
            save_policy(directory / "policy.npz", state.policy, state.policy_stats)
        if state.imitation is not None:
            state.imitation.save(directory / "imitation.parquet")
        for name, rows in (
            ("episode_log", state.log_rows),
            ("plan_log", state.plan_rows),
            ("rounds", state.round_rows),
        ):
            if rows:
                _table(rows).write_parquet(directory / f"{name}.parquet")
        meta = {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "fingerprint": fingerprint,
            "round_index": state.round_index,
            "rngs": {
                name: rng.bit_generator.state for name, rng in state.rngs.items()
            },
            "env": env_state,
            "last_updated": pendulum.now().to_iso8601_string(),
        }
        with open(directory / STATE_FILE, "w") as f:
            json.dump(meta, f, indent=2)
        logger.info(
            f"Saved checkpoint after round {state.round_index} to {directory}"
        )
    except OSError as e:
        logger.warning(f"Failed to save checkpoint: {e}")
        return False
    return True


def load_checkpoint(
    directory: Union[str, Path],
    fingerprint: str,
    rngs: dict[str, np.random.Generator],
) -> Optional[tuple[RunState, dict[str, Any]]]:
    """
    Restore a run state, or None when no checkpoint exists.

    Raises:
        CheckpointError: the checkpoint has another format version or was
            written for a different configuration
    """
    directory = Path(directory)
    state_path = directory / STATE_FILE
    if not state_path.exists():
        return None
    with open(state_path, "r") as f:
        meta = json.load(f)
    if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        logger.error(f"Checkpoint version mismatch in {directory}")
        raise CheckpointError(
            f"checkpoint format {meta.get('format_version')} is not "
            f"{CHECKPOINT_FORMAT_VERSION}; remove {directory} to start over"
        )
    if meta.get("fingerprint") != fingerprint:
        logger.error(f"Checkpoint in {directory} belongs to another config")
        raise CheckpointError(
            f"checkpoint in {directory} was written for a different "
            "configuration; refusing to resume"
        )
    for name, rng in rngs.items():
        rng.bit_generator.state = meta["rngs"][name]

    dynamics = None
    if (directory / "dynamics.npz").exists():
        dynamics, _ = load_model(directory / "dynamics.npz")
    policy, policy_stats = None, None
    if (directory / "policy.npz").exists():
        policy, policy_stats = load_policy(directory / "policy.npz")
    imitation = None
    if (directory / "imitation.parquet").exists():
        imitation = ImitationBuffer.load(directory / "imitation.parquet")

    state = RunState(
        buffer=ExperienceBuffer.load(directory / "buffer.parquet"),
        rngs=rngs,
        round_index=int(meta["round_index"]),
        dynamics=dynamics,
        policy=policy,
        policy_stats=policy_stats,
        imitation=imitation,
        log_rows=_rows(directory / "episode_log.parquet"),
        plan_rows=_rows(directory / "plan_log.parquet"),
        round_rows=_rows(directory / "rounds.parquet"),
    )
    logger.info(
        f"Loaded checkpoint from {directory} "
        f"(round {state.round_index}, saved {meta.get('last_updated')})"
    )
    return state, meta["env"]


def cleanup_checkpoint(directory: Union[str, Path]) -> None:
    directory = Path(directory)
    if directory.exists():
        shutil.rmtree(directory)
        logger.info(f"Cleaned up checkpoint {directory}")
