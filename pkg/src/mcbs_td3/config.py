"""Run configuration and the flat ``key=value`` config format.

A config file holds one ``key=value`` per line; blank lines and lines starting
with ``#`` are ignored. Keys come from a single flat namespace covering the
run, TD3 and planner settings, e.g.::

    env_name=PendulumSwingUp
    algorithm=mcbs-td3
    total_steps=150000
    beam_width=6
    rollout_depth=3
    hidden_sizes=256,256

``none`` sets an optional float (exploration_sigma, beam_noise_sigma) back to
its action_max-relative default.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

from .planner import McbsConfig
from .td3 import Td3Config

ALGORITHMS = ("td3", "mcbs-td3")


@dataclass
class RunConfig:
    env_name: str = "LinearTrack"
    algorithm: str = "mcbs-td3"
    total_steps: int = 20_000
    eval_interval: int = 1000
    eval_episodes: int = 5
    seed: int = 0
    td3: Td3Config = field(default_factory=Td3Config)
    mcbs: McbsConfig = field(default_factory=McbsConfig)
    out_dir: Path = Path("runs/default")
    buffer_capacity: int = 200_000
    eval_with_beam: bool = False
    # False writes wall_seconds as 0 so identical configs give identical files
    wall_clock: bool = True

    def __post_init__(self) -> None:
        self.out_dir = Path(self.out_dir)
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        if self.eval_interval < 1 or self.eval_episodes < 1:
            raise ValueError("eval_interval and eval_episodes must be >= 1")
        if self.total_steps > 0 and self.eval_interval > self.total_steps:
            raise ValueError(f"eval_interval {self.eval_interval} exceeds total_steps {self.total_steps}")
        if self.buffer_capacity < 1:
            raise ValueError("buffer_capacity must be >= 1")

    def replace(self, **overrides: Any) -> RunConfig:
        """Copy with flat-key overrides applied."""
        return from_flat({**to_flat(self), **overrides})


def _section_fields() -> dict[str, str]:
    owner = {}
    for cls, section in ((RunConfig, ""), (Td3Config, "td3"), (McbsConfig, "mcbs")):
        for f in dataclasses.fields(cls):
            if f.name in ("td3", "mcbs"):
                continue
            owner[f.name] = section
    return owner


_OWNER = _section_fields()
_HINTS = {
    "": typing.get_type_hints(RunConfig),
    "td3": typing.get_type_hints(Td3Config),
    "mcbs": typing.get_type_hints(McbsConfig),
}


def known_keys() -> list[str]:
    return sorted(_OWNER)


def _coerce(key: str, value: Any) -> Any:
    hint = _HINTS[_OWNER[key]][key]
    if not isinstance(value, str):
        return value
    text = value.strip()
    args = typing.get_args(hint)
    if type(None) in args:
        if text.lower() in ("none", ""):
            return None
        hint = next(a for a in args if a is not type(None))
    if hint is bool:
        lowered = text.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: cannot read {text!r} as a boolean")
    if hint is int:
        return int(text)
    if hint is float:
        return float(text)
    if hint is Path:
        return Path(text)
    if typing.get_origin(hint) is tuple:
        return tuple(int(p) for p in text.split(",") if p.strip())
    return text


def from_flat(values: Mapping[str, Any]) -> RunConfig:
    unknown = sorted(set(values) - set(_OWNER))
    if unknown:
        raise KeyError(f"unknown config keys: {', '.join(unknown)}")
    grouped: dict[str, dict[str, Any]] = {"": {}, "td3": {}, "mcbs": {}}
    for key, value in values.items():
        grouped[_OWNER[key]][key] = _coerce(key, value)
    return RunConfig(td3=Td3Config(**grouped["td3"]), mcbs=McbsConfig(**grouped["mcbs"]), **grouped[""])


def to_flat(cfg: RunConfig) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for f in dataclasses.fields(RunConfig):
        if f.name not in ("td3", "mcbs"):
            out[f.name] = getattr(cfg, f.name)
    out.update(dataclasses.asdict(cfg.td3))
    out.update(dataclasses.asdict(cfg.mcbs))
    return out


def parse_lines(lines: Iterable[str]) -> dict[str, str]:
    values = {}
    for n, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def load_config(path: str | Path, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    values: dict[str, Any] = parse_lines(Path(path).read_text().splitlines())
    values.update(overrides or {})
    return from_flat(values)


def format_config(cfg: RunConfig) -> str:
    lines = []
    for key, value in to_flat(cfg).items():
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        elif value is None:
            value = "none"
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"
