"""Experiment configuration: a JSON key-value tree with full defaulting.

Every field of every section is optional; omitted keys take the dataclass
defaults below, unknown keys are rejected so typos cannot silently change an
experiment. See configs/desk.json for a complete example.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields

from .datagen import GeneratorConfig
from .errors import ConfigurationError
from .policy import CONT0, CONT1, RewardSpec
from .trainer import TrainConfig

STRATEGY_MMQL_CONT0 = "mmql-cont0"
STRATEGY_MMQL_CONT1 = "mmql-cont1"
KNOWN_STRATEGIES = (STRATEGY_MMQL_CONT0, STRATEGY_MMQL_CONT1, "rnd", "unc")


def strategy_mode(strategy: str) -> str:
    """State mode a strategy trains/selects with (baselines get the compact one)."""
    return CONT1 if strategy == STRATEGY_MMQL_CONT1 else CONT0


@dataclass
class ExperimentConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    strategies: list[str] = field(
        default_factory=lambda: [STRATEGY_MMQL_CONT0, STRATEGY_MMQL_CONT1, "rnd", "unc"]
    )
    fusions: list[str] = field(default_factory=lambda: ["model-f"])
    budgets: list[int] = field(default_factory=lambda: [5, 10, 20, 50, 100])
    repeats: int = 1
    personalization_repeats: int = 10
    master_seed: int = 0
    save_cell_artifacts: bool = False

    def validate(self) -> None:
        if not self.strategies or not self.fusions or not self.budgets:
            raise ConfigurationError("strategies, fusions, and budgets must be non-empty")
        for s in self.strategies:
            if s not in KNOWN_STRATEGIES:
                raise ConfigurationError(f"unknown strategy {s!r}; known: {KNOWN_STRATEGIES}")
        if any(b < 1 for b in self.budgets):
            raise ConfigurationError("budgets must be >= 1")
        if self.repeats < 1 or self.personalization_repeats < 1:
            raise ConfigurationError("repeats must be >= 1")
        self.generator.validate()


_SECTION_TYPES = {
    "generator": GeneratorConfig,
    "train": TrainConfig,
    "rewards": RewardSpec,
}


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigurationError(f"{where}: expected an object, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigurationError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        if f.name in _SECTION_TYPES:
            value = _build(_SECTION_TYPES[f.name], value, f"{where}.{f.name}")
        elif f.name == "modalities" and value is not None:
            value = [(str(n), int(d)) for n, d in value]
        kwargs[f.name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{where}: {exc}") from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    cfg = _build(ExperimentConfig, data, "config")
    cfg.validate()
    return cfg


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid JSON: {exc}")
    return config_from_dict(data)


def config_to_dict(cfg) -> dict:
    """Round-trippable plain-dict view of any config dataclass."""
    return dataclasses.asdict(cfg)
