"""Run configuration: dataclass defaults, INI loading and resolved-config echo.

Layering is ``defaults < config file < command-line overrides``. Section
names match the dataclass groups below; an unknown section or key is an
error naming it.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RewardConfig:
    goal_reward: float = 10.0
    collision_penalty: float = -2.5
    discomfort_dist: float = 0.2
    goal_tolerance: float = 0.2
    progress_factor: float = 0.1


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.25
    time_limit: float = 25.0
    robot_radius: float = 0.3
    robot_v_pref: float = 1.0
    ped_radius: float = 0.3
    ped_v_pref: float = 1.0
    orca_horizon: float = 5.0
    # per-agent radius padding used only inside pedestrians' ORCA
    orca_buffer: float = 0.01
    circle_radius: float = 4.0
    square_side: float = 10.0
    circle_noise: float = 0.5


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 10_000
    gamma: float = 0.9
    lr: float = 0.0005
    eps_start: float = 0.5
    eps_end: float = 0.1
    eps_decay_episodes: int = 5000
    target_update: int = 500
    capacity: int = 100_000
    batch_size: int = 100
    grad_steps: int = 1
    update_every_step: bool = False
    double_q: bool = False
    validation_episodes: int = 100
    # episodes between validations; 0 validates at every target sync
    validation_interval: int = 0
    scenario: str = "simple"
    seed: int = 0

    def __post_init__(self):
        if self.target_update <= 0:
            raise ConfigError(f"train.target_update must be positive, got {self.target_update}")
        if self.validation_interval < 0:
            raise ConfigError(f"train.validation_interval must be >= 0, got {self.validation_interval}")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"train.gamma must lie in (0, 1), got {self.gamma}")


@dataclass(frozen=True)
class RolloutConfig:
    depth: int = 1
    width: int = 10
    model: str = "constant_velocity"
    predictor_path: str = ""
    restrict_to_candidates: bool = True

    def __post_init__(self):
        if self.depth < 0:
            raise ConfigError(f"rollout.depth must be >= 0, got {self.depth}")
        if not 1 <= self.width <= 81:
            raise ConfigError(f"rollout.width must lie in [1, 81], got {self.width}")


@dataclass(frozen=True)
class EvalConfig:
    policy: str = "sgdqn"
    scenario: str = "simple"
    cases: int = 500
    seed: int = 0
    workers: int = 1


@dataclass(frozen=True)
class RunConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    rollout: RolloutConfig = field(default_factory=RolloutConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    output_dir: str = "runs/default"


SECTIONS = {"sim": SimConfig, "reward": RewardConfig, "train": TrainConfig,
            "rollout": RolloutConfig, "eval": EvalConfig}


def _coerce(kind: type, raw: str, where: str) -> Any:
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {kind.__name__}") from None


def _field_types(cls) -> dict[str, type]:
    types = {"float": float, "int": int, "bool": bool, "str": str}
    return {f.name: types[f.type if isinstance(f.type, str) else f.type.__name__]
            for f in dataclasses.fields(cls)}


def apply_overrides(cfg: RunConfig, values: Mapping[str, Mapping[str, Any]]) -> RunConfig:
    """Return ``cfg`` with ``{section: {key: value}}`` applied (strings are parsed)."""
    updates: dict[str, Any] = {}
    for section, entries in values.items():
        if section == "run":
            for key, value in entries.items():
                if key != "output_dir":
                    raise ConfigError(f"unknown key 'run.{key}'")
                updates["output_dir"] = str(value)
            continue
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section '{section}'")
        cls = SECTIONS[section]
        types = _field_types(cls)
        changes = {}
        for key, value in entries.items():
            if key not in types:
                raise ConfigError(f"unknown key '{section}.{key}'")
            if isinstance(value, str):
                value = _coerce(types[key], value, f"{section}.{key}")
            changes[key] = value
        updates[section] = dataclasses.replace(getattr(cfg, section), **changes)
    return dataclasses.replace(cfg, **updates)


def load_config(path: str | Path | None = None,
                overrides: Mapping[str, Mapping[str, Any]] | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        cfg = apply_overrides(cfg, {s: dict(parser.items(s)) for s in parser.sections()})
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg


def config_to_ini(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for section in SECTIONS:
        group = getattr(cfg, section)
        parser[section] = {f.name: str(getattr(group, f.name)) for f in dataclasses.fields(group)}
    parser["run"] = {"output_dir": cfg.output_dir}
    lines = []
    for section in parser.sections():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {v}" for k, v in parser[section].items())
        lines.append("")
    return "\n".join(lines)


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(config_to_ini(cfg))


def config_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)
