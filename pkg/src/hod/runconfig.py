"""Strict TOML run configuration: [model] and [train] sections plus a few knobs.

Unknown keys are rejected by name so typos cannot silently fall back to
defaults. Defaults carry the reference hyperparameters: 4 low-rate
frames, rate multiplier 4, adapter bottleneck ratio 0.5, temperature
0.07.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .model import ModelConfig
from .train import TrainConfig


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    n_merges: int = 48
    log_every: int = 0

    def validate(self) -> None:
        self.model.validate()
        self.train.validate()
        if self.n_merges < 0:
            raise ConfigError(f"n_merges must be >= 0, got {self.n_merges}")


_TOP_LEVEL_KEYS = {"model", "train", "n_merges", "log_every"}


def _fill(cls, section: dict, where: str):
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"unknown {where} config keys: {', '.join(unknown)}")
    return cls(**section)


def run_config_from_dict(obj: dict) -> RunConfig:
    unknown = sorted(set(obj) - _TOP_LEVEL_KEYS)
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {', '.join(unknown)}")
    cfg = RunConfig(
        model=_fill(ModelConfig, obj.get("model", {}), "[model]"),
        train=_fill(TrainConfig, obj.get("train", {}), "[train]"),
        n_merges=obj.get("n_merges", 48),
        log_every=obj.get("log_every", 0),
    )
    cfg.validate()
    return cfg


def load_run_config(path: str) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            obj = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from exc
    return run_config_from_dict(obj)
