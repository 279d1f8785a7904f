"""Fixed-capacity FIFO replay buffer with uniform sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nets import NonFiniteError, ShapeError


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    terminal: bool


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray
    indices: np.ndarray

    def __len__(self) -> int:
        return len(self.rewards)

    def transition(self, i: int) -> Transition:
        return Transition(
            self.states[i].copy(),
            self.actions[i].copy(),
            float(self.rewards[i]),
            self.next_states[i].copy(),
            bool(self.terminals[i]),
        )


class ReplayBuffer:
    def __init__(self, capacity: int, obs_dim: int, action_dim: int) -> None:
        if capacity < 1:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.states = np.zeros((capacity, obs_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, obs_dim))
        self.terminals = np.zeros(capacity)
        self.size = 0
        self.cursor = 0

    def __len__(self) -> int:
        return self.size

    def push(self, t: Transition) -> None:
        s = np.asarray(t.state, dtype=np.float64).reshape(-1)
        a = np.asarray(t.action, dtype=np.float64).reshape(-1)
        s2 = np.asarray(t.next_state, dtype=np.float64).reshape(-1)
        if s.shape[0] != self.obs_dim or s2.shape[0] != self.obs_dim:
            raise ShapeError(f"state length {s.shape[0]}/{s2.shape[0]}, expected {self.obs_dim}")
        if a.shape[0] != self.action_dim:
            raise ShapeError(f"action length {a.shape[0]}, expected {self.action_dim}")
        if not (np.isfinite(s).all() and np.isfinite(a).all() and np.isfinite(s2).all()
                and np.isfinite(t.reward)):
            raise NonFiniteError("refusing to store a transition with non-finite entries")
        i = self.cursor
        self.states[i] = s
        self.actions[i] = a
        self.rewards[i] = t.reward
        self.next_states[i] = s2
        self.terminals[i] = 1.0 if t.terminal else 0.0
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator, allow_small: bool = False) -> Batch:
        """Uniform draw with replacement over the stored slots.

        Asking for more transitions than are stored is an error unless
        ``allow_small`` is set, in which case duplicates fill the batch.
        """
        if batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {batch_size}")
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        if self.size < batch_size and not allow_small:
            raise ValueError(f"buffer holds {self.size} transitions, cannot sample a batch of {batch_size}")
        idx = rng.integers(0, self.size, size=batch_size)
        return Batch(
            self.states[idx],
            self.actions[idx],
            self.rewards[idx],
            self.next_states[idx],
            self.terminals[idx],
            idx,
        )

    def oldest_first(self) -> list[Transition]:
        """Stored transitions in insertion order."""
        start = self.cursor if self.size == self.capacity else 0
        order = [(start + k) % self.capacity for k in range(self.size)]
        return [
            Transition(self.states[i].copy(), self.actions[i].copy(), float(self.rewards[i]),
                       self.next_states[i].copy(), bool(self.terminals[i]))
            for i in order
        ]
