import csv
import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcbs_td3 import cli
from mcbs_td3.config import RunConfig, format_config, from_flat, load_config, parse_lines, to_flat
from mcbs_td3.envs import LinearTrack, PendulumSwingUp
from mcbs_td3.harness import (
    ABLATION_HEADER,
    METRICS_HEADER,
    MetricsRow,
    TrainingAborted,
    ablate,
    evaluate,
    make_streams,
    read_metrics,
    steps_to_fraction,
    train,
)
from mcbs_td3.nets import mlp_to_bytes
from mcbs_td3.td3 import Td3Agent, load_agent

from stubs import ForcedEpisodes

TINY = dict(
    total_steps=300, eval_interval=100, eval_episodes=2, warmup_steps=100,
    batch_size=32, hidden_sizes=(16, 16), buffer_capacity=1000,
)


def tiny(tmp_path, name="run", **kw):
    return from_flat({**TINY, "out_dir": tmp_path / name, **kw})


def rows_of(means, start=1000):
    return [MetricsRow(start * (i + 1), i, 0.0, m, 0.0, 0, 0.0, 0.0) for i, m in enumerate(means)]


def agent_bytes(agent):
    return [mlp_to_bytes(n) for n in agent.networks().values()]


# --- evaluate ----------------------------------------------------------------

def test_evaluate_forced_returns():
    ForcedEpisodes.returns = itertools.cycle([1.0, 3.0])
    agent = Td3Agent.create(1, 1, 1.0, (4,), np.random.default_rng(0))
    assert evaluate(agent, ForcedEpisodes(), 2, 0) == (2.0, 1.0)


def test_evaluate_single_episode_has_zero_std():
    agent = Td3Agent.create(3, 1, 2.0, (8,), np.random.default_rng(0))
    assert evaluate(agent, PendulumSwingUp(), 1, 3)[1] == 0.0


def test_evaluate_deterministic_env_identical_episodes():
    class FixedStart(LinearTrack):
        def _initial_state(self, rng):
            return (1.0,)

    agent = Td3Agent.create(1, 1, 1.0, (8,), np.random.default_rng(0))
    mean, std = evaluate(agent, FixedStart(), 3, 0)
    assert std == 0.0 and math.isfinite(mean)


def test_evaluate_rejects_zero_episodes():
    with pytest.raises(ValueError):
        evaluate(Td3Agent.create(1, 1, 1.0, (4,), np.random.default_rng(0)), LinearTrack(), 0, 0)


def test_evaluation_purity():
    env = PendulumSwingUp()
    env.reset(np.random.default_rng(1))
    env.step(np.array([0.3]))
    snap = env.snapshot()
    agent = Td3Agent.create(3, 1, 2.0, (8, 8), np.random.default_rng(2))
    before = agent_bytes(agent)
    evaluate(agent, env, 2, 5)
    evaluate(agent, env, 1, 5, planner=(from_flat({}).mcbs, from_flat({}).td3))
    assert env.snapshot() == snap
    assert agent_bytes(agent) == before
    assert agent.update_counter == 0


def test_evaluate_seeded_repeatable():
    agent = Td3Agent.create(3, 1, 2.0, (8,), np.random.default_rng(0))
    assert evaluate(agent, PendulumSwingUp(), 3, 9) == evaluate(agent, PendulumSwingUp(), 3, 9)


# --- steps_to_fraction -------------------------------------------------------

def test_steps_to_fraction_shifted_rule():
    rows = rows_of([-100.0, -55.0, -19.0, -10.0])
    assert steps_to_fraction(rows, 0.9, baseline=-100.0) == 3000


def test_steps_to_fraction_full_reaches_last_row():
    rows = rows_of([-9.0, -5.0, -2.0, -1.0])
    assert steps_to_fraction(rows, 1.0, baseline=-10.0) == 4000


def test_steps_to_fraction_flat_never_reached():
    rows = rows_of([-7.0] * 5)
    assert steps_to_fraction(rows, 0.5, baseline=-7.0) is None
    assert steps_to_fraction(rows, 0.5) is None


def test_steps_to_fraction_errors():
    with pytest.raises(ValueError):
        steps_to_fraction([], 0.9)
    with pytest.raises(ValueError):
        steps_to_fraction(rows_of([1.0]), 0.0)


@settings(max_examples=60, deadline=None)
@given(means=st.lists(st.floats(-1e4, 0), min_size=1, max_size=20), f=st.floats(0.01, 1.0))
def test_steps_to_fraction_monotone_in_fraction(means, f):
    rows = rows_of(means)
    lo = steps_to_fraction(rows, f / 2, baseline=-2e4)
    hi = steps_to_fraction(rows, f, baseline=-2e4)
    assert lo is not None and hi is not None and lo <= hi


# --- training runs -----------------------------------------------------------

def test_zero_steps_writes_header_and_checkpoint(tmp_path):
    result = train(tiny(tmp_path, total_steps=0))
    assert result.metrics_path.read_text() == ",".join(METRICS_HEADER) + "\n"
    agent, meta = load_agent(result.checkpoint_path)
    assert meta["config"]["total_steps"] == 0
    assert agent_bytes(agent) == agent_bytes(result.agent)


def test_metrics_schema_and_monotone_steps(tmp_path):
    result = train(tiny(tmp_path))
    with open(result.metrics_path, newline="") as fh:
        reader = csv.reader(fh)
        assert next(reader) == METRICS_HEADER
        body = list(reader)
    assert [int(r[0]) for r in body] == [100, 200, 300]
    assert read_metrics(result.metrics_path) == result.rows
    walls = [r.wall_seconds for r in result.rows]
    assert walls == sorted(walls)
    cum = [r.rollout_env_steps_cum for r in result.rows]
    assert cum == sorted(cum)


def test_seed_totality(tmp_path):
    a = train(tiny(tmp_path, "a", wall_clock=False, seed=4))
    b = train(tiny(tmp_path, "b", wall_clock=False, seed=4))
    assert a.metrics_path.read_bytes() == b.metrics_path.read_bytes()
    for name in ("actor.net", "critic1.net", "critic2_target.net"):
        assert (a.checkpoint_path / name).read_bytes() == (b.checkpoint_path / name).read_bytes()
    c = train(tiny(tmp_path, "c", wall_clock=False, seed=5))
    assert a.metrics_path.read_bytes() != c.metrics_path.read_bytes()


def test_accounting_consistency(tmp_path):
    result = train(tiny(tmp_path, env_name="PendulumSwingUp"))
    assert result.rows[-1].rollout_env_steps_cum == sum(result.ledger.call_charges) == result.ledger.rollout_env_steps
    assert result.ledger.real_env_steps == 300


def test_td3_runs_no_rollouts(tmp_path):
    result = train(tiny(tmp_path, algorithm="td3"))
    assert all(r.rollout_env_steps_cum == 0 and r.beam_on_fraction == 0.0 for r in result.rows)


def test_beam_choice_does_not_perturb_weight_init(tmp_path):
    a = train(tiny(tmp_path, "a", total_steps=0, algorithm="td3"))
    b = train(tiny(tmp_path, "b", total_steps=0, beam_width=18))
    assert agent_bytes(a.agent) == agent_bytes(b.agent)


def test_streams_are_independent_and_seeded():
    s1, s2 = make_streams(3), make_streams(3)
    draws = {k: g.random() for k, g in s1.items()}
    assert draws == {k: g.random() for k, g in s2.items()}
    assert len(set(draws.values())) == len(draws)


def test_nonfinite_training_aborts_with_nan_row(tmp_path, monkeypatch):
    import mcbs_td3.harness as harness

    def boom(*a, **k):
        raise harness.NonFiniteError("critic1 gradient non-finite")

    monkeypatch.setattr(harness, "train_step", boom)
    with pytest.raises(TrainingAborted, match="real step 101"):
        train(tiny(tmp_path))
    rows = read_metrics(tmp_path / "run" / "metrics.csv")
    assert len(rows) == 2 and rows[-1].real_step == 101 and math.isnan(rows[-1].eval_return_mean)


# --- ablation ----------------------------------------------------------------

def test_ablation_grid_rows(tmp_path):
    base = tiny(tmp_path, "grid", total_steps=200, num_sims=1)
    cells = ablate(base, [1, 2], [1, 2])
    with open(tmp_path / "grid" / "ablation.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ABLATION_HEADER
    assert len(rows) - 1 == 2 * 2 + 1 == len(cells)
    assert rows[1][:2] == ["1", ""] and rows[1][5] == "0"
    assert [(c.beam_width, c.rollout_depth) for c in cells[1:]] == [(1, 1), (1, 2), (2, 1), (2, 2)]


def test_ablation_budget_cap(tmp_path):
    base = tiny(tmp_path, "cap", total_steps=150, eval_interval=150, warmup_steps=140)
    (cell,) = ablate(base, [18], [6])[1:]
    calls = 150 - 140
    assert cell.rollout_steps_total <= calls * 18 * 5 * 6


def test_ablation_records_failed_cells(tmp_path, monkeypatch):
    import mcbs_td3.harness as harness

    real_train = harness.train

    def flaky(cfg):
        if cfg.mcbs.beam_width == 2:
            raise RuntimeError("cell exploded")
        return real_train(cfg)

    monkeypatch.setattr(harness, "train", flaky)
    cells = ablate(tiny(tmp_path, "bad", total_steps=100), [1, 2], [1])
    assert cells[2].error == "cell exploded" and math.isnan(cells[2].final_eval_mean)
    assert cells[1].error is None
    assert len((tmp_path / "bad" / "ablation.csv").read_text().splitlines()) == 4


def test_ablate_rejects_empty_lists(tmp_path):
    with pytest.raises(ValueError):
        ablate(tiny(tmp_path), [], [1])


# --- config ------------------------------------------------------------------

def test_config_round_trip(tmp_path):
    cfg = tiny(tmp_path, beam_noise_sigma=0.3, adaptive=False)
    path = tmp_path / "cfg.txt"
    path.write_text(format_config(cfg))
    assert load_config(path) == cfg
    assert load_config(path, {"seed": "9"}).seed == 9


def test_config_parsing_rules():
    assert parse_lines(["# comment", "", " seed = 3 "]) == {"seed": "3"}
    with pytest.raises(ValueError):
        parse_lines(["no equals sign"])
    with pytest.raises(KeyError):
        from_flat({"beam_widht": "3"})
    with pytest.raises(ValueError):
        from_flat({"algorithm": "ppo"})
    with pytest.raises(ValueError):
        from_flat({"adaptive": "maybe"})
    cfg = from_flat({"hidden_sizes": "32,16", "exploration_sigma": "none", "adaptive": "off"})
    assert cfg.td3.hidden_sizes == (32, 16) and cfg.td3.exploration_sigma is None and not cfg.mcbs.adaptive


def test_replace_keeps_other_fields():
    cfg = RunConfig(seed=7).replace(beam_width=18)
    assert cfg.seed == 7 and cfg.mcbs.beam_width == 18
    assert to_flat(cfg)["beam_width"] == 18


# --- CLI ---------------------------------------------------------------------

def test_cli_describe(capsys):
    assert cli.main(["describe", "--env", "DoubleIntegrator"]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["obs_dim"] == 2 and info["action_dim"] == 1


def test_cli_train_eval_ablate(tmp_path, capsys):
    conf = tmp_path / "run.cfg"
    conf.write_text(format_config(tiny(tmp_path, "cli")))
    assert cli.main(["train", "--config", str(conf), "--seed", "2", "--total_steps=200"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert len(read_metrics(out["metrics"])) == 2
    assert "seed=2" in (tmp_path / "cli" / "config.txt").read_text()

    assert cli.main(["eval", "--checkpoint", out["checkpoint"], "--env", "LinearTrack",
                     "--episodes", "2", "--seed", "1"]) == 0
    ev = json.loads(capsys.readouterr().out)
    agent, _ = load_agent(out["checkpoint"])
    assert (ev["mean"], ev["std"]) == evaluate(agent, LinearTrack(), 2, 1)

    assert cli.main(["ablate", "--config", str(conf), "--beams", "1", "--depths", "1",
                     "--total_steps", "100", "--out_dir", str(tmp_path / "abl")]) == 0
    assert json.loads(capsys.readouterr().out)["cells"] == 2


@pytest.mark.parametrize("argv", [
    ["describe", "--env", "Nowhere"],
    ["train", "--no_such_key", "1"],
    ["train", "--total_steps", "-5"],
    ["eval", "--checkpoint", "/nonexistent", "--env", "LinearTrack"],
])
def test_cli_errors_exit_nonzero_with_json(argv, capsys):
    code = cli.main(argv)
    err = capsys.readouterr().err.strip().splitlines()
    assert code != 0
    assert len(err) >= 1 and "error" in json.loads(err[-1])
