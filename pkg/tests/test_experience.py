import numpy as np
import pytest

from errors import CheckpointError, DimensionMismatchError, EmptyBufferError
from experience.buffer import (
    ExperienceBuffer,
    TrajectoryStep,
    compute_norm_stats,
    make_windows,
    split,
)
from experience.normalization import DEFAULT_EPSILON, NormStats, compute_stats


def _fill(buffer: ExperienceBuffer, n: int, episode: int = 0, start: int = 0):
    for i in range(start, start + n):
        obs = np.full(buffer.obs_dim, float(i))
        act = np.full(buffer.act_dim, float(-i))
        buffer.append(TrajectoryStep(obs, act, episode, i))
    return buffer


def test_fifo_keeps_newest_steps():
    buffer = _fill(ExperienceBuffer(capacity=3, obs_dim=1, act_dim=1), 5)
    snap = buffer.snapshot()
    assert len(buffer) == 3
    np.testing.assert_array_equal(snap.obs[:, 0], [2.0, 3.0, 4.0])
    np.testing.assert_array_equal(snap.step, [2, 3, 4])


def test_latest_returns_tail_in_order():
    buffer = _fill(ExperienceBuffer(capacity=10, obs_dim=1, act_dim=1), 7)
    np.testing.assert_array_equal(buffer.latest(3).obs[:, 0], [4.0, 5.0, 6.0])
    assert len(buffer.latest(0).obs) == 0


def test_step_index_must_increase_within_episode():
    buffer = _fill(ExperienceBuffer(capacity=10, obs_dim=1, act_dim=1), 3)
    with pytest.raises(ValueError):
        buffer.append(TrajectoryStep(np.zeros(1), np.zeros(1), 0, 1))


def test_stats_of_two_values():
    stats = compute_stats(
        np.array([[1.0], [3.0]]), np.array([[0.0], [0.0]]), np.array([True])
    )
    assert stats.mean[0] == 2.0
    assert stats.std[0] == 1.0
    assert stats.std[1] == DEFAULT_EPSILON
    assert stats.delta_scale[0] == 2.0


def test_normalize_examples():
    stats = compute_stats(
        np.array([[1.0], [2.0], [3.0]]),
        np.zeros((3, 1)),
        np.array([True, True]),
    )
    normalized = stats.normalize(np.array([[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]]))
    expected = np.array([-1.0, 0.0, 1.0]) / np.sqrt(2.0 / 3.0)
    np.testing.assert_allclose(normalized[:, 0], expected, rtol=1e-12)
    np.testing.assert_array_equal(normalized[:, 1], 0.0)


def test_denormalize_inverts_normalize(rng):
    stats = NormStats(
        mean=rng.normal(size=9),
        std=rng.uniform(0.5, 2.0, size=9),
        delta_scale=np.ones(5),
        obs_dim=5,
    )
    x = rng.normal(size=(4, 9))
    np.testing.assert_allclose(stats.denormalize(stats.normalize(x)), x)


def test_normalize_rejects_wrong_width():
    stats = NormStats.identity(5, 4)
    with pytest.raises(DimensionMismatchError):
        stats.normalize(np.zeros((2, 8)))


def test_empty_buffer_has_no_stats():
    with pytest.raises(EmptyBufferError):
        compute_norm_stats(ExperienceBuffer(capacity=4))


def test_stats_track_buffer_contents(rng):
    buffer = ExperienceBuffer(capacity=50)
    for i in range(80):
        buffer.append(TrajectoryStep(rng.normal(size=5), rng.normal(size=4), 0, i))
    incremental = compute_norm_stats(buffer)
    snap = buffer.snapshot()
    scratch = compute_stats(snap.obs, snap.act, snap.consecutive())
    np.testing.assert_array_equal(incremental.mean, scratch.mean)
    np.testing.assert_array_equal(incremental.std, scratch.std)


def test_window_counts_per_run():
    buffer = ExperienceBuffer(capacity=100, obs_dim=1, act_dim=1)
    _fill(buffer, 25, episode=0)
    _fill(buffer, 30, episode=1)
    assert len(make_windows(buffer, 20)) == 5 + 10


def test_window_count_edges():
    assert len(make_windows(_fill(ExperienceBuffer(50, 1, 1), 21), 20)) == 1
    assert len(make_windows(_fill(ExperienceBuffer(50, 1, 1), 20), 20)) == 0


def test_windows_never_cross_a_gap():
    buffer = ExperienceBuffer(capacity=100, obs_dim=1, act_dim=1)
    _fill(buffer, 10, start=0)
    _fill(buffer, 10, start=20)
    windows = make_windows(buffer, 3)
    assert len(windows) == 14
    assert np.all(np.diff(windows.steps, axis=1) == 1)


def test_window_contents_and_target():
    buffer = _fill(ExperienceBuffer(capacity=20, obs_dim=1, act_dim=1), 6)
    windows = make_windows(buffer, 3)
    sample = windows[1]
    np.testing.assert_array_equal(sample.obs_window[:, 0], [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(sample.act_window[:, 0], [-1.0, -2.0, -3.0])
    np.testing.assert_array_equal(sample.target, [1.0])


def test_split_is_chronological():
    train, val = split(list(range(10)), 0.8)
    assert train == list(range(8))
    assert val == [8, 9]
    train, val = split([0], 0.8)
    assert train == [0] and val == []


def test_split_rejects_bad_ratio():
    with pytest.raises(ValueError):
        split(list(range(4)), 1.0)


def test_parquet_round_trip(tmp_path, rng):
    buffer = ExperienceBuffer(capacity=6)
    for i in range(9):
        buffer.append(TrajectoryStep(rng.normal(size=5), rng.normal(size=4), 2, i))
    path = tmp_path / "buffer.parquet"
    buffer.save(path)
    loaded = ExperienceBuffer.load(path)
    assert loaded.capacity == 6
    for a, b in zip(buffer.snapshot(), loaded.snapshot()):
        np.testing.assert_array_equal(a, b)


def test_load_rejects_foreign_parquet(tmp_path):
    import polars as pl

    path = tmp_path / "other.parquet"
    pl.DataFrame({"x": [1, 2]}).write_parquet(path)
    with pytest.raises(CheckpointError):
        ExperienceBuffer.load(path)
