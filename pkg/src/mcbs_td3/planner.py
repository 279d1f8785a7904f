"""Monte Carlo beam search action selection on top of a TD3 agent.

A planning call perturbs the policy action into a beam of candidates, scores
each candidate by the mean discounted return of several short simulated
rollouts (bootstrapped with the twin-critic minimum), and executes the best
one. Rollouts run on clones restored from a snapshot of the live
environment, so the real episode is never touched.

All B * N_sim rollouts of a call advance in lockstep so the actor and critics
see one batch per depth level. Results are reduced in (candidate, simulation)
order and match running :func:`short_horizon` on each rollout separately.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .envs import Env, EnvSnapshot
from .nets import Mlp, NonFiniteError
from .td3 import Critic, Td3Agent, Td3Config, explore_action, twin_min


class PlannerError(RuntimeError):
    pass


@dataclass
class McbsConfig:
    beam_width: int = 6
    rollout_depth: int = 3
    num_sims: int = 5
    # None means 0.2 * action_max
    beam_noise_sigma: float | None = None
    adaptive: bool = True
    saturation_window: int = 10
    saturation_epsilon: float = 0.01
    min_beam_interval: int = 10
    # extra exploration noise on the selected action; 0 executes a* as chosen
    selected_action_sigma: float = 0.0

    def __post_init__(self) -> None:
        if self.beam_width < 1 or self.num_sims < 1:
            raise ValueError("beam_width and num_sims must be >= 1")
        if self.rollout_depth < 0:
            raise ValueError("rollout_depth must be >= 0")
        if self.beam_noise_sigma is not None and self.beam_noise_sigma < 0:
            raise ValueError("beam_noise_sigma must be >= 0")
        if self.saturation_window < 1 or self.min_beam_interval < 1:
            raise ValueError("saturation_window and min_beam_interval must be >= 1")
        if self.saturation_epsilon < 0 or self.selected_action_sigma < 0:
            raise ValueError("saturation_epsilon and selected_action_sigma must be >= 0")

    def beam_sigma(self, action_max: float) -> float:
        return 0.2 * action_max if self.beam_noise_sigma is None else self.beam_noise_sigma

    def max_rollout_steps(self) -> int:
        return self.beam_width * self.num_sims * self.rollout_depth


@dataclass
class Candidate:
    action: np.ndarray
    returns: np.ndarray
    score: float = field(init=False)

    def __post_init__(self) -> None:
        self.returns = np.asarray(self.returns, dtype=np.float64)
        self.score = float(np.mean(self.returns))


@dataclass
class BudgetLedger:
    """Simulator and network cost counters. Forwards are counted per row."""

    real_env_steps: int = 0
    rollout_env_steps: int = 0
    actor_forwards: int = 0
    critic_forwards: int = 0
    planning_calls: int = 0
    beam_calls: int = 0
    call_charges: list[int] = field(default_factory=list)

    def charge_call(self, rollout_steps: int) -> None:
        self.beam_calls += 1
        self.rollout_env_steps += rollout_steps
        self.call_charges.append(rollout_steps)


def generate_beam(
    agent: Td3Agent, state: np.ndarray, beam_width: int, sigma: float, rng: np.random.Generator
) -> np.ndarray:
    """(B, action_dim) candidates clip(pi(s) + eta_i, -A_max, A_max); eta is not clipped."""
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    base = agent.act(state)
    eta = rng.normal(0.0, 1.0, size=(beam_width, base.shape[-1])) * sigma
    return np.clip(base[None, :] + eta, -agent.action_max, agent.action_max)


def _rollouts(
    env: Env,
    snapshot: EnvSnapshot,
    first_actions: np.ndarray,
    depth: int,
    gamma: float,
    noise: np.ndarray,
    agent: Td3Agent,
    critics: tuple[Mlp | Critic, Mlp | Critic],
    ledger: BudgetLedger | None,
) -> np.ndarray:
    """Lockstep rollouts; ``noise`` has shape (K, depth, action_dim)."""
    k_total = len(first_actions)
    sims = []
    for _ in range(k_total):
        sim = env.clone()
        try:
            sim.restore(snapshot)
        except Exception as exc:
            raise PlannerError(f"could not restore rollout copy: {exc}") from exc
        sims.append(sim)
    obs = np.tile(sims[0].observe(), (k_total, 1))
    actions = np.array(first_actions, dtype=np.float64, copy=True)
    ret = np.zeros(k_total)
    alpha = np.ones(k_total)
    alive = np.ones(k_total, dtype=bool)
    steps = 0
    for d in range(depth):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        for k in idx:
            res = sims[k].step(actions[k])
            ret[k] += alpha[k] * res.reward
            alpha[k] *= gamma
            obs[k] = res.obs
            if res.done:
                alive[k] = False
        steps += idx.size
        idx = np.flatnonzero(alive)
        if idx.size:
            a = agent.act(obs[idx]) + noise[idx, d]
            actions[idx] = np.clip(a, -agent.action_max, agent.action_max)
            if ledger is not None:
                ledger.actor_forwards += idx.size
    idx = np.flatnonzero(alive)
    if idx.size:
        boot = twin_min(critics[0], critics[1], obs[idx], actions[idx])
        if not np.isfinite(boot).all():
            raise NonFiniteError(f"critic bootstrap is non-finite for rollouts {idx[~np.isfinite(boot)].tolist()}")
        ret[idx] += alpha[idx] * boot
        if ledger is not None:
            ledger.critic_forwards += 2 * idx.size
    if ledger is not None:
        ledger.charge_call(steps)
    return ret


def short_horizon(
    env: Env,
    snapshot: EnvSnapshot,
    first_action: np.ndarray,
    depth: int,
    gamma: float,
    sigma: float,
    agent: Td3Agent,
    rng: np.random.Generator,
    critics: tuple[Mlp | Critic, Mlp | Critic] | None = None,
    ledger: BudgetLedger | None = None,
) -> float:
    """Discounted return of one simulated rollout from ``snapshot``.

    Steps up to ``depth`` times starting with ``first_action``; each later
    action is clip(pi(s') + eta). Returns early on ``done``; otherwise adds
    gamma^depth * min(Q1, Q2) at the final state paired with the freshly
    sampled action there. ``depth == 0`` is the twin-critic minimum of the
    first action at the snapshot state.
    """
    if critics is None:
        critics = (agent.critic1, agent.critic2)
    a0 = np.asarray(first_action, dtype=np.float64).reshape(1, -1)
    noise = rng.normal(0.0, 1.0, size=(1, depth, a0.shape[1])) * sigma
    return float(_rollouts(env, snapshot, a0, depth, gamma, noise, agent, critics, ledger)[0])


def evaluate_candidates(
    env: Env,
    snapshot: EnvSnapshot,
    candidates: np.ndarray,
    depth: int,
    num_sims: int,
    gamma: float,
    sigma: float,
    agent: Td3Agent,
    rng: np.random.Generator,
    critics: tuple[Mlp | Critic, Mlp | Critic] | None = None,
    ledger: BudgetLedger | None = None,
) -> list[Candidate]:
    """Score each candidate by the mean of ``num_sims`` rollout returns.

    Rollout (i, j) uses its own slice of a noise block drawn up front, so the
    draws do not depend on which rollouts terminate early.
    """
    candidates = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    if len(candidates) == 0:
        raise ValueError("evaluate_candidates needs at least one candidate")
    if num_sims < 1:
        raise ValueError("num_sims must be >= 1")
    if critics is None:
        critics = (agent.critic1, agent.critic2)
    b, adim = candidates.shape
    noise = rng.normal(0.0, 1.0, size=(b * num_sims, depth, adim)) * sigma
    first = np.repeat(candidates, num_sims, axis=0)
    returns = _rollouts(env, snapshot, first, depth, gamma, noise, agent, critics, ledger)
    returns = returns.reshape(b, num_sims)
    return [Candidate(candidates[i].copy(), returns[i]) for i in range(b)]


def select_action(candidates: Sequence[Candidate]) -> tuple[Candidate, int]:
    """Highest score wins; ties go to the earliest candidate."""
    if not candidates:
        raise ValueError("select_action needs at least one candidate")
    scores = np.array([c.score for c in candidates])
    if not np.isfinite(scores).all():
        raise NonFiniteError(f"non-finite candidate scores: {scores.tolist()}")
    i = int(np.argmax(scores))
    return candidates[i], i


def relative_improvement(history: Sequence[float], window: int) -> float:
    first, last = history[-window], history[-1]
    return (last - first) / max(abs(first), 1e-12)


def saturation_schedule(history: Sequence[float], cfg: McbsConfig, real_step: int) -> bool:
    """Whether to run the beam at ``real_step`` given past evaluation means.

    Saturated once the relative change between the oldest and newest of the
    last ``saturation_window`` evaluations falls below ``saturation_epsilon``.
    While saturated the beam only runs on multiples of ``min_beam_interval``.
    A drop of more than ``saturation_epsilon`` (relative) below the best
    evaluation so far restores full-rate planning.
    """
    if not cfg.adaptive or len(history) < cfg.saturation_window:
        return True
    best = max(history)
    if history[-1] < best - cfg.saturation_epsilon * abs(best):
        return True
    if relative_improvement(history, cfg.saturation_window) >= cfg.saturation_epsilon:
        return True
    return real_step % cfg.min_beam_interval == 0


def plan_action(
    agent: Td3Agent,
    env: Env,
    state: np.ndarray,
    cfg: McbsConfig,
    td3cfg: Td3Config,
    ledger: BudgetLedger,
    rngs: Mapping[str, np.random.Generator],
    real_step: int = 0,
    history: Sequence[float] = (),
) -> tuple[np.ndarray, bool]:
    """Action for the live state of ``env`` and whether the beam ran.

    ``rngs`` needs the streams "beam", "rollout" and "exploration". With
    the beam off this is exactly :func:`explore_action`.
    """
    ledger.planning_calls += 1
    a_max = agent.action_max
    if not saturation_schedule(history, cfg, real_step):
        ledger.actor_forwards += 1
        return explore_action(agent, state, td3cfg.exploration_scale(a_max), rngs["exploration"]), False
    sigma = cfg.beam_sigma(a_max)
    snap = env.snapshot()
    beam = generate_beam(agent, state, cfg.beam_width, sigma, rngs["beam"])
    ledger.actor_forwards += 1
    scored = evaluate_candidates(
        env, snap, beam, cfg.rollout_depth, cfg.num_sims, td3cfg.gamma, sigma, agent,
        rngs["rollout"], ledger=ledger,
    )
    best, _ = select_action(scored)
    action = best.action
    if cfg.selected_action_sigma > 0:
        eps = rngs["exploration"].normal(0.0, 1.0, size=action.shape) * cfg.selected_action_sigma
        action = np.clip(action + eps, -a_max, a_max)
    return action, True
