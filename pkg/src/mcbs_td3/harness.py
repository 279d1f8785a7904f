"""Training, evaluation and ablation runs with CSV metrics output."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import RunConfig, format_config, to_flat
from .envs import Env, make_env
from .nets import NonFiniteError
from .planner import BudgetLedger, McbsConfig, plan_action
from .replay import ReplayBuffer, Transition
from .td3 import Td3Agent, Td3Config, explore_action, save_agent, train_step

log = logging.getLogger(__name__)

STREAMS = (
    "weight-init",
    "env-reset",
    "exploration",
    "beam",
    "rollout",
    "buffer-sampling",
    "target-noise",
    "warmup",
    "eval",
)

METRICS_HEADER = [
    "real_step",
    "episodes_done",
    "train_return_last",
    "eval_return_mean",
    "eval_return_std",
    "rollout_env_steps_cum",
    "beam_on_fraction",
    "wall_seconds",
]

ABLATION_HEADER = [
    "beam_width",
    "rollout_depth",
    "final_eval_mean",
    "final_eval_std",
    "steps_to_90pct",
    "rollout_steps_total",
    "wall_seconds",
]


class TrainingAborted(RuntimeError):
    pass


def make_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators per named purpose, all derived from one seed."""
    root = int(seed) % 2**64
    return {
        name: np.random.Generator(np.random.PCG64(np.random.SeedSequence([root, i])))
        for i, name in enumerate(STREAMS)
    }


@dataclass
class MetricsRow:
    real_step: int
    episodes_done: int
    train_return_last: float
    eval_return_mean: float
    eval_return_std: float
    rollout_env_steps_cum: int
    beam_on_fraction: float
    wall_seconds: float

    def as_csv(self) -> list[str]:
        return [repr(v) if isinstance(v, float) else str(v) for v in asdict(self).values()]

    @classmethod
    def from_csv(cls, row: dict[str, str]) -> MetricsRow:
        kwargs = {}
        for f in fields(cls):
            kwargs[f.name] = int(row[f.name]) if f.type in (int, "int") else float(row[f.name])
        return cls(**kwargs)


def read_metrics(path: str | Path) -> list[MetricsRow]:
    with open(path, newline="") as fh:
        return [MetricsRow.from_csv(r) for r in csv.DictReader(fh)]


@dataclass
class TrainResult:
    rows: list[MetricsRow]
    agent: Td3Agent
    ledger: BudgetLedger
    random_baseline: float
    metrics_path: Path
    checkpoint_path: Path

    @property
    def final(self) -> MetricsRow | None:
        return self.rows[-1] if self.rows else None


def evaluate(
    agent: Td3Agent,
    env: Env,
    episodes: int,
    seed: int,
    planner: tuple[McbsConfig, Td3Config] | None = None,
) -> tuple[float, float]:
    """Mean and population std of episode returns under the deterministic policy.

    Runs on a clone, so neither ``env`` nor ``agent`` changes. Episode starts
    are drawn from ``seed``. Passing ``planner`` evaluates with the beam
    planner in the loop (adaptive throttling off) instead of the raw policy.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    sim = env.clone()
    rng = np.random.default_rng(seed)
    plan_streams = make_streams(seed) if planner else None
    if planner:
        mcfg = McbsConfig(**{**asdict(planner[0]), "adaptive": False})
    returns = []
    for _ in range(episodes):
        obs = sim.reset(rng)
        total, done = 0.0, False
        while not done:
            if planner:
                action, _ = plan_action(agent, sim, obs, mcfg, planner[1], BudgetLedger(), plan_streams)
            else:
                action = agent.act(obs)
            res = sim.step(action)
            total += res.reward
            obs, done = res.obs, res.done
        returns.append(total)
    arr = np.array(returns)
    return float(arr.mean()), float(arr.std())


def random_policy_return(env: Env, episodes: int, seed: int) -> float:
    """Mean return of uniform random actions; the zero point for steps_to_fraction."""
    sim = env.clone()
    rng = np.random.default_rng(seed)
    act_rng = np.random.default_rng([seed, 1])
    a_max, adim = sim.spec.action_max, sim.spec.action_dim
    totals = []
    for _ in range(episodes):
        sim.reset(rng)
        total, done = 0.0, False
        while not done:
            res = sim.step(act_rng.uniform(-a_max, a_max, size=adim))
            total += res.reward
            done = res.done
        totals.append(total)
    return float(np.mean(totals))


def steps_to_fraction(
    rows: Sequence[MetricsRow], fraction: float, baseline: float | None = None
) -> int | None:
    """First real_step reaching ``fraction`` of the run's improvement over ``baseline``.

    Returns are shifted so ``baseline`` (default: the first row) maps to 0 and
    the best evaluation of the run maps to 1. ``None`` means never reached,
    including runs that never beat the baseline.
    """
    if not rows:
        raise ValueError("steps_to_fraction needs at least one metrics row")
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    means = [r.eval_return_mean for r in rows]
    base = means[0] if baseline is None else baseline
    span = max(means) - base
    if not span > 0:
        return None
    for row, m in zip(rows, means):
        if m - base >= fraction * span:
            return row.real_step
    return None


def _check_finite(name: str, value: float, step: int) -> None:
    if not math.isfinite(value):
        raise NonFiniteError(f"{name} is non-finite at real step {step}")


def train(cfg: RunConfig) -> TrainResult:
    """Run one seeded training job, writing metrics.csv and a checkpoint under out_dir."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(format_config(cfg))
    started = time.perf_counter()

    env = make_env(cfg.env_name)
    eval_env = make_env(cfg.env_name)
    spec = env.spec
    tcfg, mcfg = cfg.td3, cfg.mcbs
    streams = make_streams(cfg.seed)
    eval_seed = int(streams["eval"].integers(2**63))
    agent = Td3Agent.create(spec.obs_dim, spec.action_dim, spec.action_max, tcfg.hidden_sizes, streams["weight-init"])
    buffer = ReplayBuffer(cfg.buffer_capacity, spec.obs_dim, spec.action_dim)
    ledger = BudgetLedger()
    random_baseline = random_policy_return(eval_env, cfg.eval_episodes, eval_seed)
    explore_sigma = tcfg.exploration_scale(spec.action_max)
    planner_cfg = (mcfg, tcfg) if cfg.eval_with_beam else None

    history: list[float] = []
    rows: list[MetricsRow] = []
    obs = env.reset(streams["env-reset"])
    ep_return = 0.0
    last_return: float | None = None
    episodes_done = 0
    beam_steps = 0

    metrics_path = out / "metrics.csv"
    fh = open(metrics_path, "w", newline="")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(METRICS_HEADER)
    fh.flush()

    def emit(real_step: int, mean: float, std: float) -> MetricsRow:
        learn_steps = real_step - tcfg.warmup_steps
        row = MetricsRow(
            real_step=real_step,
            episodes_done=episodes_done,
            train_return_last=last_return if last_return is not None else ep_return,
            eval_return_mean=mean,
            eval_return_std=std,
            rollout_env_steps_cum=ledger.rollout_env_steps,
            beam_on_fraction=beam_steps / learn_steps if learn_steps > 0 else 0.0,
            wall_seconds=time.perf_counter() - started if cfg.wall_clock else 0.0,
        )
        writer.writerow(row.as_csv())
        fh.flush()
        rows.append(row)
        return row

    try:
        for step in range(cfg.total_steps):
            real_step = step + 1
            try:
                if step < tcfg.warmup_steps:
                    action = streams["warmup"].uniform(-spec.action_max, spec.action_max, size=spec.action_dim)
                elif cfg.algorithm == "td3":
                    action = explore_action(agent, obs, explore_sigma, streams["exploration"])
                else:
                    action, beam_on = plan_action(agent, env, obs, mcfg, tcfg, ledger, streams, step, history)
                    beam_steps += beam_on
                res = env.step(action)
                ledger.real_env_steps += 1
                buffer.push(Transition(obs, action, res.reward, res.obs, res.terminal))
                ep_return += res.reward
                obs = res.obs
                if res.done:
                    episodes_done += 1
                    last_return = ep_return
                    ep_return = 0.0
                    obs = env.reset(streams["env-reset"])
                if step >= tcfg.warmup_steps and len(buffer) >= tcfg.batch_size:
                    batch = buffer.sample(tcfg.batch_size, streams["buffer-sampling"])
                    train_step(agent, batch, tcfg, streams["target-noise"])
                if real_step % cfg.eval_interval == 0:
                    mean, std = evaluate(agent, eval_env, cfg.eval_episodes, eval_seed, planner_cfg)
                    _check_finite("eval_return_mean", mean, real_step)
                    emit(real_step, mean, std)
                    history.append(mean)
                    log.info("step %d eval %.3f +- %.3f", real_step, mean, std)
            except NonFiniteError as exc:
                emit(real_step, float("nan"), float("nan"))
                raise TrainingAborted(f"aborted at real step {real_step}: {exc}") from exc
    finally:
        fh.close()

    ckpt = out / "checkpoint"
    manifest = {
        **{k: (list(v) if isinstance(v, tuple) else v) for k, v in to_flat(cfg).items()},
        "env": env.describe(),
        "random_baseline": random_baseline,
        "eval_seed": eval_seed,
        "ledger": {k: v for k, v in asdict(ledger).items() if k != "call_charges"},
    }
    save_agent(agent, ckpt, manifest)
    return TrainResult(rows, agent, ledger, random_baseline, metrics_path, ckpt)


@dataclass
class AblationCell:
    beam_width: int
    rollout_depth: int | None
    final_eval_mean: float
    final_eval_std: float
    steps_to_90pct: int | None
    rollout_steps_total: int
    wall_seconds: float
    error: str | None = None

    def as_csv(self) -> list[str]:
        def fmt(v):
            if v is None:
                return ""
            return repr(v) if isinstance(v, float) else str(v)

        return [fmt(getattr(self, k)) for k in ABLATION_HEADER]


def _run_cell(cfg: RunConfig, beam_width: int, depth: int | None) -> AblationCell:
    started = time.perf_counter()
    try:
        result = train(cfg)
    except Exception as exc:  # one failing cell must not sink the grid
        log.error("ablation cell B=%s D=%s failed: %s", beam_width, depth, exc)
        return AblationCell(beam_width, depth, float("nan"), float("nan"), None, 0,
                            time.perf_counter() - started, error=str(exc))
    final = result.final
    return AblationCell(
        beam_width,
        depth,
        final.eval_return_mean if final else float("nan"),
        final.eval_return_std if final else float("nan"),
        steps_to_fraction(result.rows, 0.9, result.random_baseline) if result.rows else None,
        result.ledger.rollout_env_steps,
        time.perf_counter() - started,
    )


def ablate(base: RunConfig, beams: Sequence[int], depths: Sequence[int], out_path: str | Path | None = None) -> list[AblationCell]:
    """Train one run per (B, D) cell plus a plain TD3 row; write the grid CSV.

    The TD3 row comes first with beam_width 1 and an empty rollout_depth.
    Each run writes into its own subdirectory of ``base.out_dir``.
    """
    if not beams or not depths:
        raise ValueError("beam and depth lists must be non-empty")
    root = Path(base.out_dir)
    cells = [_run_cell(base.replace(algorithm="td3", out_dir=root / "td3"), 1, None)]
    for b in beams:
        for d in depths:
            cfg = base.replace(algorithm="mcbs-td3", beam_width=b, rollout_depth=d, out_dir=root / f"B{b}_D{d}")
            cells.append(_run_cell(cfg, b, d))
    path = Path(out_path) if out_path else root / "ablation.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ABLATION_HEADER)
        for cell in cells:
            writer.writerow(cell.as_csv())
    return cells
