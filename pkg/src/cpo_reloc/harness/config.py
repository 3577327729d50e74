"""Experiment configuration and its YAML file format.

The file mirrors :class:`ExperimentConfig`; every section is optional and
unknown keys are rejected::

    algorithm: cpo            # cpo | trpo | trpo_rp
    constraint: {r: 0.05, c: 0.01, cl: 0.25, t_min: -0.1, t_max: 1.1}
    gamma: 0.995
    gamma_c: 0.995
    gae_lambda: 0.97
    bc: {num_demos: 25, lr: 0.001, epochs: 150}
    training: {iterations: 150, episodes_per_iteration: 20, seed: 0}
    trust_region: {delta: 0.01}
    env: {horizon: 100}
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from ..env import EnvConfig
from ..geometry import ConstraintConfig
from ..optim import TrustRegionCfg

ALGORITHMS = ("cpo", "trpo", "trpo_rp")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BcConfig:
    num_demos: int = 25
    lr: float = 0.001
    epochs: int = 150
    batch_size: int = 64
    demo_seed: int = 12345


@dataclass(frozen=True)
class TrainingConfig:
    iterations: int = 150
    episodes_per_iteration: int = 20
    seed: int = 0
    workers: int = 1
    value_lr: float = 0.001
    value_epochs: int = 5
    value_batch_size: int = 64
    eval_rollouts: int = 500


@dataclass(frozen=True)
class ExperimentConfig:
    algorithm: str = "cpo"
    constraint: ConstraintConfig = field(default_factory=ConstraintConfig)
    gamma: float = 0.995
    gamma_c: float = 0.995
    gae_lambda: float = 0.97
    bc: BcConfig = field(default_factory=BcConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    trust_region: TrustRegionCfg = field(default_factory=TrustRegionCfg)
    env: EnvConfig = field(default_factory=EnvConfig)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        for name in ("gamma", "gamma_c"):
            if not 0 < getattr(self, name) <= 1:
                raise ConfigError(f"{name} must be in (0, 1]")
        if not 0 <= self.gae_lambda <= 1:
            raise ConfigError("gae_lambda must be in [0, 1]")
        if self.training.iterations < 0 or self.training.episodes_per_iteration < 1:
            raise ConfigError("need iterations >= 0 and episodes_per_iteration >= 1")

    def with_(self, **changes) -> "ExperimentConfig":
        """Copy with top-level fields or ``section__key`` entries replaced."""
        top, nested = {}, {}
        for key, value in changes.items():
            if "__" in key:
                section, sub = key.split("__", 1)
                nested.setdefault(section, {})[sub] = value
            else:
                top[key] = value
        for section, values in nested.items():
            top[section] = replace(top.get(section, getattr(self, section)), **values)
        return replace(self, **top)


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        default = getattr(cls(), key) if key in known else None
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value, f"{path}.{key}" if path else key)
        elif isinstance(default, tuple):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data or {}, "")


def load_config(path) -> ExperimentConfig:
    return config_from_dict(yaml.safe_load(Path(path).read_text()))


def config_to_dict(cfg) -> dict:
    out = {}
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            out[f.name] = config_to_dict(value)
        elif isinstance(value, tuple):
            out[f.name] = list(value)
        else:
            out[f.name] = value
    return out


def dump_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=False))
