"""Experiment configuration: YAML files, per-experiment defaults, and seed precedence."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any

import yaml

from .core import ValidationError

EXPERIMENTS = ("e1", "e2", "e3")

_DEFAULTS: dict[str, dict[str, Any]] = {
    "e1": {
        "m": [8, 16],
        "properties": ["mean", "expectile:0.3", "quantile:0.5"],
        "trials": 500,
        "decode_trials": 200,
        "target_error": 0.25,
    },
    "e2": {
        "m": [8, 16, 32],
        "properties": ["mean"],
        "trials": 40,
        "k_override": 32,
        "n_min": 256,
        "n_max": 2**26,
        "n_steps_per_octave": 4,
        "repeats": 3,
    },
    "e3": {
        "m": [8],
        "T": [2**e for e in range(10, 17)],
        "properties": ["mean"],
        "trials": 30,
        "k_override": 64,
        "alpha0": 1.0,
        "bootstrap": 1000,
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    m: list[int]
    properties: list[str]
    trials: int
    seed: int = 0
    T: list[int] = field(default_factory=list)
    p: float = 2.0
    output_dir: str = "results"
    k_override: int | None = None
    target_error: float = 0.25
    decode_trials: int = 200
    n_min: int = 256
    n_max: int = 2**26
    n_steps_per_octave: int = 4
    repeats: int = 1
    alpha0: float = 1.0
    bootstrap: int = 1000
    workers: int = 1

    def __post_init__(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ValidationError(f"unknown experiment {self.experiment!r}")
        if not self.m or not self.properties:
            raise ValidationError("m and properties must be non-empty")
        if self.experiment == "e3" and not self.T:
            raise ValidationError("e3 needs a non-empty T list")
        if self.trials < 20:
            raise ValidationError("probability estimates need at least 20 trials")
        if self.workers < 1:
            raise ValidationError("workers must be positive")

    def to_json(self) -> dict[str, Any]:
        return asdict(self)


def default_config(experiment: str, **overrides: Any) -> ExperimentConfig:
    if experiment not in EXPERIMENTS:
        raise ValidationError(f"unknown experiment {experiment!r}")
    return ExperimentConfig(experiment=experiment, **{**_DEFAULTS[experiment], **overrides})


def resolve_seed(flag: int | None, config_value: int | None) -> int:
    """``--seed`` flag, then the config file, then ``MCLAB_SEED``, then 0."""
    if flag is not None:
        return int(flag)
    if config_value is not None:
        return int(config_value)
    env = os.environ.get("MCLAB_SEED")
    return int(env) if env else 0


def load_config(path: str | None, experiment: str, seed_flag: int | None = None, **overrides: Any) -> ExperimentConfig:
    """Merge defaults, an optional YAML file (flat or under an ``experiment:`` section), and overrides."""
    data: dict[str, Any] = {}
    if path:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
        if not isinstance(raw, dict):
            raise ValidationError("config file must hold a mapping")
        sectioned = any(k in EXPERIMENTS for k in raw)
        data = dict(raw.get(experiment) or {}) if sectioned else dict(raw)
        data.pop("experiment", None)
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    seed = resolve_seed(seed_flag, data.pop("seed", None))
    cfg = default_config(experiment, **data, seed=seed)
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
