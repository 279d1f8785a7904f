"""Command-line entry point.

    mcbs-td3 train --config FILE [--key value ...]
    mcbs-td3 eval --checkpoint DIR --env NAME --episodes N --seed S
    mcbs-td3 ablate --config FILE --beams 1,6,18 --depths 1,3,6 [--key value ...]
    mcbs-td3 describe --env NAME

Any config key can be overridden with ``--key value`` (``--key=value`` also
works). Failures exit with status 1 and print one JSON line to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .config import from_flat, known_keys, load_config
from .envs import ENVIRONMENTS, make_env
from .harness import ablate, evaluate, train
from .td3 import load_agent


def _overrides(extra: Sequence[str]) -> dict[str, str]:
    out = {}
    keys = set(known_keys())
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise ValueError(f"unexpected argument {tok!r}")
        name = tok[2:]
        if "=" in name:
            name, value = name.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ValueError(f"missing value for --{name}")
            value = extra[i + 1]
            i += 2
        name = name.replace("-", "_")
        if name not in keys:
            raise ValueError(f"unknown option --{name}")
        out[name] = value
    return out


def _int_list(text: str) -> list[int]:
    return [int(p) for p in text.split(",") if p.strip()]


class _Parser(argparse.ArgumentParser):
    """Raise on bad arguments so main() reports them as one JSON line."""

    def error(self, message: str):
        raise ValueError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mcbs-td3", description="TD3 with Monte Carlo beam search action selection")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one run")
    p.add_argument("--config", type=Path)

    p = sub.add_parser("eval", help="evaluate a checkpoint with the deterministic policy")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--env", required=True)
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("ablate", help="beam width x rollout depth grid")
    p.add_argument("--config", type=Path)
    p.add_argument("--beams", type=_int_list, default=[1, 6, 18])
    p.add_argument("--depths", type=_int_list, default=[1, 3, 6])

    p = sub.add_parser("describe", help="print environment dimensions as JSON")
    p.add_argument("--env", required=True, choices=sorted(ENVIRONMENTS))
    return parser


def _config(path: Path | None, extra: Sequence[str]):
    overrides = _overrides(extra)
    return load_config(path, overrides) if path else from_flat(overrides)


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    if args.command == "describe":
        print(json.dumps(make_env(args.env).describe(), sort_keys=True))
    elif args.command == "train":
        result = train(_config(args.config, extra))
        final = result.final
        print(json.dumps({
            "metrics": str(result.metrics_path),
            "checkpoint": str(result.checkpoint_path),
            "final_eval_mean": final.eval_return_mean if final else None,
            "rollout_env_steps": result.ledger.rollout_env_steps,
        }))
    elif args.command == "eval":
        if extra:
            parser.error(f"unrecognized arguments: {' '.join(extra)}")
        agent, _ = load_agent(args.checkpoint)
        mean, std = evaluate(agent, make_env(args.env), args.episodes, args.seed)
        print(json.dumps({"mean": mean, "std": std, "episodes": args.episodes}))
    elif args.command == "ablate":
        cfg = _config(args.config, extra)
        cells = ablate(cfg, args.beams, args.depths)
        print(json.dumps({"ablation": str(Path(cfg.out_dir) / "ablation.csv"), "cells": len(cells)}))
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    try:
        return run(argv)
    except Exception as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
