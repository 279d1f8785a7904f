"""TD3 learner: twin critics, target policy smoothing, delayed actor updates."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable, Protocol

import numpy as np

from .nets import (
    AdamState,
    Gradients,
    Mlp,
    NonFiniteError,
    init_mlp,
    load_mlp,
    mlp_backward,
    mlp_forward,
    mlp_input_grad,
    polyak_update,
    save_mlp,
    sgd_adam_step,
)
from .replay import Batch


@dataclass
class Td3Config:
    gamma: float = 0.99
    tau: float = 0.005
    policy_delay: int = 2
    target_noise_sigma: float = 0.2
    target_noise_clip: float = 0.5
    # None means 0.1 * action_max, resolved against the environment
    exploration_sigma: float | None = None
    batch_size: int = 256
    warmup_steps: int = 1000
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    hidden_sizes: tuple[int, ...] = (256, 256)

    def __post_init__(self) -> None:
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must lie in (0, 1], got {self.tau}")
        if self.policy_delay < 1:
            raise ValueError("policy_delay must be >= 1")
        if self.target_noise_sigma < 0 or self.target_noise_clip < 0:
            raise ValueError("target noise sigma and clip must be >= 0")
        if self.exploration_sigma is not None and self.exploration_sigma < 0:
            raise ValueError("exploration_sigma must be >= 0")
        if self.batch_size < 1 or self.warmup_steps < 0:
            raise ValueError("batch_size must be >= 1 and warmup_steps >= 0")

    def exploration_scale(self, action_max: float) -> float:
        return 0.1 * action_max if self.exploration_sigma is None else self.exploration_sigma


class Critic(Protocol):
    """Anything that scores (state, action) batches; Mlp critics are wrapped."""

    def __call__(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray: ...


@dataclass
class Td3Agent:
    obs_dim: int
    action_dim: int
    action_max: float
    actor: Mlp
    critic1: Mlp
    critic2: Mlp
    actor_target: Mlp
    critic1_target: Mlp
    critic2_target: Mlp
    actor_opt: AdamState
    critic1_opt: AdamState
    critic2_opt: AdamState
    update_counter: int = 0
    actor_updates: int = 0

    @classmethod
    def create(
        cls,
        obs_dim: int,
        action_dim: int,
        action_max: float,
        hidden_sizes: tuple[int, ...],
        rng: np.random.Generator,
    ) -> Td3Agent:
        actor = init_mlp((obs_dim, *hidden_sizes, action_dim), rng, output_activation="tanh")
        critic1 = init_mlp((obs_dim + action_dim, *hidden_sizes, 1), rng)
        critic2 = init_mlp((obs_dim + action_dim, *hidden_sizes, 1), rng)
        return cls(
            obs_dim, action_dim, float(action_max),
            actor, critic1, critic2,
            actor.copy(), critic1.copy(), critic2.copy(),
            AdamState.for_net(actor), AdamState.for_net(critic1), AdamState.for_net(critic2),
        )

    def networks(self) -> dict[str, Mlp]:
        return {
            "actor": self.actor,
            "actor_target": self.actor_target,
            "critic1": self.critic1,
            "critic2": self.critic2,
            "critic1_target": self.critic1_target,
            "critic2_target": self.critic2_target,
        }

    def optimizers(self) -> dict[str, AdamState]:
        return {"actor": self.actor_opt, "critic1": self.critic1_opt, "critic2": self.critic2_opt}

    def act(self, state: np.ndarray, target: bool = False) -> np.ndarray:
        """Deterministic policy output A_max * tanh(...), clipped to the box."""
        net = self.actor_target if target else self.actor
        return np.clip(self.action_max * mlp_forward(net, state), -self.action_max, self.action_max)


def q_value(critic: Mlp | Critic, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Critic output as a flat array (one value per row, or a 0-d array)."""
    if isinstance(critic, Mlp):
        x = np.concatenate([np.asarray(states, dtype=np.float64), np.asarray(actions, dtype=np.float64)], axis=-1)
        return mlp_forward(critic, x)[..., 0]
    return np.asarray(critic(states, actions), dtype=np.float64)


def twin_min(c1: Mlp | Critic, c2: Mlp | Critic, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    return np.minimum(q_value(c1, states, actions), q_value(c2, states, actions))


def smoothed_target_action(
    agent: Td3Agent, next_states: np.ndarray, cfg: Td3Config, rng: np.random.Generator
) -> np.ndarray:
    """clip(pi'(s') + clip(eps, -c, c), -A_max, A_max) with eps ~ N(0, sigma^2)."""
    base = agent.act(next_states, target=True)
    eps = rng.normal(0.0, 1.0, size=base.shape) * cfg.target_noise_sigma
    eps = np.clip(eps, -cfg.target_noise_clip, cfg.target_noise_clip)
    return np.clip(base + eps, -agent.action_max, agent.action_max)


def td3_target(
    agent: Td3Agent,
    rewards: np.ndarray,
    next_states: np.ndarray,
    terminals: np.ndarray,
    cfg: Td3Config,
    rng: np.random.Generator,
) -> np.ndarray:
    """y = r + gamma (1 - terminal) min(Q1'(s', a'), Q2'(s', a'))."""
    a_next = smoothed_target_action(agent, next_states, cfg, rng)
    q_next = twin_min(agent.critic1_target, agent.critic2_target, next_states, a_next)
    if not np.isfinite(q_next).all():
        raise NonFiniteError(f"target critics produced non-finite values: {q_next[~np.isfinite(q_next)][:5]}")
    rewards = np.asarray(rewards, dtype=np.float64)
    mask = 1.0 - np.asarray(terminals, dtype=np.float64)
    return rewards + cfg.gamma * mask * q_next


def _mse_step(critic: Mlp, opt: AdamState, x: np.ndarray, y: np.ndarray, lr: float) -> float:
    q = mlp_forward(critic, x)[:, 0]
    resid = q - y
    loss = float(np.mean(resid * resid))
    upstream = (2.0 / len(y)) * resid[:, None]
    grads, _ = mlp_backward(critic, x, upstream)
    sgd_adam_step(critic, grads, opt, lr)
    return loss


def critic_update(agent: Td3Agent, batch: Batch, cfg: Td3Config, rng: np.random.Generator) -> tuple[float, float]:
    """One Adam step per critic against a shared target; returns pre-update MSE losses."""
    if len(batch) == 0:
        raise ValueError("critic_update needs a non-empty batch")
    y = td3_target(agent, batch.rewards, batch.next_states, batch.terminals, cfg, rng)
    x = np.concatenate([batch.states, batch.actions], axis=1)
    loss1 = _mse_step(agent.critic1, agent.critic1_opt, x, y, cfg.critic_lr)
    loss2 = _mse_step(agent.critic2, agent.critic2_opt, x, y, cfg.critic_lr)
    return loss1, loss2


def mlp_critic_grad(critic: Mlp, obs_dim: int) -> Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]:
    def value_and_grad(states: np.ndarray, actions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = np.concatenate([states, actions], axis=1)
        q = mlp_forward(critic, x)[:, 0]
        dx = mlp_input_grad(critic, x, np.ones((len(x), 1)))
        return q, dx[:, obs_dim:]

    return value_and_grad


def actor_update(
    agent: Td3Agent,
    states: np.ndarray,
    cfg: Td3Config,
    critic_grad: Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]] | None = None,
) -> float:
    """One Adam step on -mean Q1(s, pi(s)); returns the pre-update loss.

    ``critic_grad(states, actions) -> (q, dq/da)`` defaults to critic1.
    Critics are only read.
    """
    if critic_grad is None:
        critic_grad = mlp_critic_grad(agent.critic1, agent.obs_dim)
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    n = len(states)
    u = mlp_forward(agent.actor, states)
    q, dq_da = critic_grad(states, agent.action_max * u)
    upstream = -(agent.action_max / n) * np.asarray(dq_da, dtype=np.float64)
    grads, _ = mlp_backward(agent.actor, states, upstream)
    sgd_adam_step(agent.actor, grads, agent.actor_opt, cfg.actor_lr)
    agent.actor_updates += 1
    return float(-np.mean(q))


def target_sync(agent: Td3Agent, cfg: Td3Config) -> None:
    polyak_update(agent.actor_target, agent.actor, cfg.tau)
    polyak_update(agent.critic1_target, agent.critic1, cfg.tau)
    polyak_update(agent.critic2_target, agent.critic2, cfg.tau)


def train_step(agent: Td3Agent, batch: Batch, cfg: Td3Config, rng: np.random.Generator) -> dict[str, float]:
    """Critic step every call; actor step and target sync every policy_delay calls."""
    loss1, loss2 = critic_update(agent, batch, cfg, rng)
    agent.update_counter += 1
    out = {"critic1_loss": loss1, "critic2_loss": loss2}
    if agent.update_counter % cfg.policy_delay == 0:
        out["actor_loss"] = actor_update(agent, batch.states, cfg)
        target_sync(agent, cfg)
    for k, v in out.items():
        if not np.isfinite(v):
            raise NonFiniteError(f"{k} became non-finite at update {agent.update_counter}")
    return out


def explore_action(agent: Td3Agent, state: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """clip(pi(s) + eps, -A_max, A_max), eps ~ N(0, sigma^2)."""
    a = agent.act(state)
    eps = rng.normal(0.0, 1.0, size=a.shape) * sigma
    return np.clip(a + eps, -agent.action_max, agent.action_max)


def save_agent(agent: Td3Agent, path: str | Path, manifest: dict[str, Any] | None = None) -> None:
    """Write a checkpoint directory: one .net file per network and Adam moment, plus manifest.json."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    for name, net in agent.networks().items():
        save_mlp(net, root / f"{name}.net")
    steps = {}
    for name, opt in agent.optimizers().items():
        net = agent.networks()[name]
        for moment, g in (("m", opt.m), ("v", opt.v)):
            save_mlp(Mlp(net.layer_sizes, g.weights, g.biases), root / f"{name}.adam_{moment}.net")
        steps[name] = opt.step
    meta = {
        "format": "mcbs_td3-checkpoint",
        "version": 1,
        "obs_dim": agent.obs_dim,
        "action_dim": agent.action_dim,
        "action_max": agent.action_max,
        "update_counter": agent.update_counter,
        "actor_updates": agent.actor_updates,
        "adam_steps": steps,
        "config": manifest or {},
    }
    (root / "manifest.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=_jsonable))


def load_agent(path: str | Path) -> tuple[Td3Agent, dict[str, Any]]:
    root = Path(path)
    meta = json.loads((root / "manifest.json").read_text())
    nets = {name: load_mlp(root / f"{name}.net") for name in (
        "actor", "actor_target", "critic1", "critic2", "critic1_target", "critic2_target")}
    opts = {}
    for name in ("actor", "critic1", "critic2"):
        m = load_mlp(root / f"{name}.adam_m.net")
        v = load_mlp(root / f"{name}.adam_v.net")
        opts[name] = AdamState(Gradients(m.weights, m.biases), Gradients(v.weights, v.biases),
                               step=int(meta["adam_steps"][name]))
    agent = Td3Agent(
        meta["obs_dim"], meta["action_dim"], float(meta["action_max"]),
        nets["actor"], nets["critic1"], nets["critic2"],
        nets["actor_target"], nets["critic1_target"], nets["critic2_target"],
        opts["actor"], opts["critic1"], opts["critic2"],
        update_counter=int(meta["update_counter"]),
        actor_updates=int(meta["actor_updates"]),
    )
    return agent, meta


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, Path):
        return str(obj)
    if hasattr(obj, "__dataclass_fields__"):
        return asdict(obj)
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")
