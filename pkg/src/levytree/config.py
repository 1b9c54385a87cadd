"""Run configuration: mechanism/offspring specs, experiment parameters,
seeds and output paths, with JSON round-tripping."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .mechanism import BranchingMechanism
from .offspring import OffspringDistribution, from_spec


class ConfigError(ValueError):
    """Missing or invalid configuration fields."""


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce an experiment run bit for bit."""

    experiment: str
    seed: int
    mechanism: dict | None = None  # table: kind / alpha / beta / c / gamma / atoms
    offspring: str | None = None   # "geometric" | "stable:<g>" | "custom:<path>"
    params: dict = field(default_factory=dict)
    workers: int = 1
    out: str | None = None
    tolerances: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.experiment:
            raise ConfigError("experiment name is required")
        if self.seed is None:
            raise ConfigError("a seed is mandatory for reproducibility")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(RunConfig)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            return RunConfig(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @staticmethod
    def load(path) -> "RunConfig":
        with open(path) as fh:
            return RunConfig.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    # -- resolved objects

    def build_mechanism(self) -> BranchingMechanism:
        if self.mechanism is None:
            raise ConfigError("this experiment needs a 'mechanism' table")
        return BranchingMechanism.from_config(self.mechanism)

    def build_offspring(self) -> OffspringDistribution:
        if self.offspring is None:
            raise ConfigError("this experiment needs an 'offspring' spec")
        return from_spec(self.offspring)
