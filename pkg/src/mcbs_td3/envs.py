"""Small deterministic control environments with exact snapshot/restore.

Each environment keeps its full simulator state as plain Python floats plus a
step counter, so a snapshot is just an immutable tuple and restoring it is an
exact round trip. Randomness only enters through ``reset(rng)``; the
dynamics themselves are deterministic.

``StepResult.done`` is ``terminal or truncated``. Only ``terminal`` masks the
TD3 bootstrap; ``truncated`` marks the time limit.
"""

from __future__ import annotations

import copy
import math
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass
from typing import Any

import numpy as np

from .nets import ShapeError


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    action_dim: int
    action_max: float
    max_episode_steps: int
    reward_bound: float

    def __post_init__(self) -> None:
        if self.obs_dim < 1 or self.action_dim < 1:
            raise ValueError("obs_dim and action_dim must be >= 1")
        if not self.action_max > 0:
            raise ValueError("action_max must be positive")
        if self.max_episode_steps < 1:
            raise ValueError("max_episode_steps must be >= 1")


@dataclass(frozen=True)
class EnvSnapshot:
    env_name: str
    state: tuple[Any, ...]
    t: int


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    terminal: bool
    truncated: bool

    @property
    def done(self) -> bool:
        return self.terminal or self.truncated


class SnapshotError(ValueError):
    """Raised when a snapshot cannot be restored into this environment."""


class Env(ABC):
    """Base class. Subclasses implement the state accessors and the dynamics."""

    spec: EnvSpec

    def __init__(self) -> None:
        self.t = 0

    @abstractmethod
    def _initial_state(self, rng: np.random.Generator | None) -> tuple[Any, ...]: ...

    @abstractmethod
    def _get_state(self) -> tuple[Any, ...]: ...

    @abstractmethod
    def _set_state(self, state: tuple[Any, ...]) -> None: ...

    @abstractmethod
    def _advance(self, action: np.ndarray) -> tuple[float, bool]:
        """Apply one clamped action; return (reward, terminal)."""

    @abstractmethod
    def observe(self) -> np.ndarray: ...

    def reset(self, rng: np.random.Generator | None = None) -> np.ndarray:
        """Start an episode. ``rng=None`` gives the fixed test-mode initial state."""
        self._set_state(self._initial_state(rng))
        self.t = 0
        return self.observe()

    def step(self, action: np.ndarray) -> StepResult:
        a = np.asarray(action, dtype=np.float64).reshape(-1)
        if a.shape[0] != self.spec.action_dim:
            raise ShapeError(
                f"{self.spec.name}.step: expected action length {self.spec.action_dim}, got {a.shape[0]}"
            )
        a = np.clip(a, -self.spec.action_max, self.spec.action_max)
        reward, terminal = self._advance(a)
        self.t += 1
        truncated = (not terminal) and self.t >= self.spec.max_episode_steps
        return StepResult(self.observe(), float(reward), bool(terminal), truncated)

    def snapshot(self) -> EnvSnapshot:
        return EnvSnapshot(self.spec.name, self._get_state(), self.t)

    def restore(self, snap: EnvSnapshot) -> None:
        if not isinstance(snap, EnvSnapshot) or snap.env_name != self.spec.name:
            got = getattr(snap, "env_name", type(snap).__name__)
            raise SnapshotError(f"cannot restore a {got!r} snapshot into {self.spec.name!r}")
        self._set_state(snap.state)
        self.t = snap.t

    def clone(self) -> Env:
        """Independent instance in the same state."""
        return copy.copy(self)

    def describe(self) -> dict[str, Any]:
        return asdict(self.spec)


class LinearTrack(Env):
    """1-D point: s' = clip(s + 0.1 a, -5, 5), reward -s'^2.

    Test-mode reset is s = 1.0; train mode draws s ~ U[-2, 2].
    Per-step reward lies in [-25, 0].
    """

    spec = EnvSpec("LinearTrack", 1, 1, 1.0, 200, 25.0)

    def __init__(self) -> None:
        super().__init__()
        self.s = 1.0

    def _initial_state(self, rng):
        return (1.0,) if rng is None else (float(rng.uniform(-2.0, 2.0)),)

    def _get_state(self):
        return (self.s,)

    def _set_state(self, state):
        (self.s,) = state

    def _advance(self, action):
        self.s = min(5.0, max(-5.0, self.s + 0.1 * float(action[0])))
        return -self.s * self.s, False

    def observe(self):
        return np.array([self.s])


class DoubleIntegrator(Env):
    """Unit mass on a line: x' = x + v dt, v' = v + a dt, dt = 0.05.

    Reward -(x^2 + 0.1 v^2 + 0.01 a^2) with x, v the post-step state. Resets
    at (1, 0) in test mode, x ~ U[-1, 1], v = 0 in train mode. Over a
    300-step episode |v| <= 15 and |x| <= 226, so |reward| <= 51099.
    """

    dt = 0.05
    spec = EnvSpec("DoubleIntegrator", 2, 1, 1.0, 300, 51099.0)

    def __init__(self) -> None:
        super().__init__()
        self.x = 1.0
        self.v = 0.0

    def _initial_state(self, rng):
        if rng is None:
            return (1.0, 0.0)
        return (float(rng.uniform(-1.0, 1.0)), 0.0)

    def _get_state(self):
        return (self.x, self.v)

    def _set_state(self, state):
        self.x, self.v = state

    def _advance(self, action):
        a = float(action[0])
        x = self.x + self.v * self.dt
        v = self.v + a * self.dt
        self.x, self.v = x, v
        return -(x * x + 0.1 * v * v + 0.01 * a * a), False

    def observe(self):
        return np.array([self.x, self.v])


def wrap_angle(theta: float) -> float:
    return ((theta + math.pi) % (2.0 * math.pi)) - math.pi


class PendulumSwingUp(Env):
    """Torque-limited pendulum, theta = 0 upright.

    theta_ddot = 3g/(2l) sin(theta) + 3/(m l^2) u, semi-implicit Euler with
    dt = 0.05, angular velocity clipped to [-8, 8]. Observation is
    [cos theta, sin theta, theta_dot]. Reward
    -(wrap(theta)^2 + 0.1 theta_dot^2 + 0.001 u^2) uses the pre-step state
    and lies in [-(pi^2 + 6.4 + 0.004), 0]. Train reset draws
    theta ~ U[-pi, pi], theta_dot ~ U[-1, 1]; test reset hangs straight down.
    """

    g, m, l, dt, max_speed = 10.0, 1.0, 1.0, 0.05, 8.0
    spec = EnvSpec("PendulumSwingUp", 3, 1, 2.0, 200, math.pi**2 + 6.4 + 0.004)

    def __init__(self) -> None:
        super().__init__()
        self.theta = math.pi
        self.theta_dot = 0.0

    def _initial_state(self, rng):
        if rng is None:
            return (math.pi, 0.0)
        return (float(rng.uniform(-math.pi, math.pi)), float(rng.uniform(-1.0, 1.0)))

    def _get_state(self):
        return (self.theta, self.theta_dot)

    def _set_state(self, state):
        self.theta, self.theta_dot = state

    def _advance(self, action):
        u = float(action[0])
        th, thdot = self.theta, self.theta_dot
        w = wrap_angle(th)
        reward = -(w * w + 0.1 * thdot * thdot + 0.001 * u * u)
        acc = 3.0 * self.g / (2.0 * self.l) * math.sin(th) + 3.0 / (self.m * self.l**2) * u
        thdot = min(self.max_speed, max(-self.max_speed, thdot + acc * self.dt))
        self.theta = th + thdot * self.dt
        self.theta_dot = thdot
        return reward, False

    def observe(self):
        return np.array([math.cos(self.theta), math.sin(self.theta), self.theta_dot])


ENVIRONMENTS: dict[str, type[Env]] = {
    cls.spec.name: cls for cls in (LinearTrack, DoubleIntegrator, PendulumSwingUp)
}


def make_env(name: str) -> Env:
    try:
        return ENVIRONMENTS[name]()
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None
