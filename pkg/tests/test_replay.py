import numpy as np
import pytest

from mcbs_td3.nets import NonFiniteError, ShapeError
from mcbs_td3.replay import ReplayBuffer, Transition


def tr(i: float) -> Transition:
    return Transition(np.array([i, -i]), np.array([i / 10]), float(i), np.array([i + 1, 0.0]), i % 2 == 0)


def test_push_counts():
    buf = ReplayBuffer(10, 2, 1)
    buf.push(tr(1))
    assert len(buf) == 1


def test_ring_evicts_oldest_in_order():
    buf = ReplayBuffer(3, 2, 1)
    for i in range(1, 5):
        buf.push(tr(i))
    assert len(buf) == 3
    assert [t.reward for t in buf.oldest_first()] == [2.0, 3.0, 4.0]
    for i in range(5, 9):
        buf.push(tr(i))
    assert [t.reward for t in buf.oldest_first()] == [6.0, 7.0, 8.0]


def test_singleton_sample():
    buf = ReplayBuffer(4, 2, 1)
    buf.push(tr(3))
    one = buf.sample(1, np.random.default_rng(0)).transition(0)
    assert one.reward == 3.0 and one.state.tolist() == [3.0, -3.0] and one.terminal is False


def test_undersized_batch_rejected_by_default():
    buf = ReplayBuffer(4, 2, 1)
    buf.push(tr(3))
    with pytest.raises(ValueError, match="holds 1 transitions, cannot sample a batch of 5"):
        buf.sample(5, np.random.default_rng(0))


def test_undersized_batch_with_replacement_repeats_singleton():
    buf = ReplayBuffer(4, 2, 1)
    buf.push(tr(3))
    batch = buf.sample(5, np.random.default_rng(1), allow_small=True)
    assert batch.rewards.tolist() == [3.0] * 5
    assert batch.indices.tolist() == [0] * 5


def test_empty_buffer_never_samples():
    with pytest.raises(ValueError):
        ReplayBuffer(4, 2, 1).sample(1, np.random.default_rng(0), allow_small=True)


def test_sample_deterministic_for_same_stream_state():
    buf = ReplayBuffer(50, 2, 1)
    for i in range(50):
        buf.push(tr(i))
    a = buf.sample(16, np.random.default_rng(42))
    b = buf.sample(16, np.random.default_rng(42))
    assert a.indices.tolist() == b.indices.tolist()
    assert np.array_equal(a.states, b.states)


def test_sampling_never_hits_empty_slots():
    buf = ReplayBuffer(100, 2, 1)
    for i in range(7):
        buf.push(tr(i + 1))
    idx = np.concatenate([buf.sample(7, np.random.default_rng(s)).indices for s in range(300)])
    assert idx.min() >= 0 and idx.max() < 7


def test_sampling_after_wraparound_excludes_evicted():
    buf = ReplayBuffer(4, 2, 1)
    for i in range(10):
        buf.push(tr(i))
    rewards = set(buf.sample(4, np.random.default_rng(0)).rewards.tolist())
    for s in range(50):
        rewards |= set(buf.sample(4, np.random.default_rng(s)).rewards.tolist())
    assert rewards <= {6.0, 7.0, 8.0, 9.0}


def test_uniform_frequencies():
    buf = ReplayBuffer(4, 2, 1)
    for i in range(4):
        buf.push(tr(i))
    rng = np.random.default_rng(2024)
    idx = np.concatenate([buf.sample(4, rng).indices for _ in range(25_000)])
    assert idx.size == 100_000
    freq = np.bincount(idx, minlength=4) / idx.size
    assert np.all(np.abs(freq - 0.25) <= 0.02)


def test_shape_and_finiteness_checks():
    buf = ReplayBuffer(4, 2, 1)
    with pytest.raises(ShapeError):
        buf.push(Transition(np.zeros(3), np.zeros(1), 0.0, np.zeros(2), False))
    with pytest.raises(ShapeError):
        buf.push(Transition(np.zeros(2), np.zeros(2), 0.0, np.zeros(2), False))
    with pytest.raises(NonFiniteError):
        buf.push(Transition(np.zeros(2), np.zeros(1), float("nan"), np.zeros(2), False))
    assert len(buf) == 0
