"""Experiment configuration: JSON round-trip with strict key checking."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .training import DEFAULT_ITERATIONS, TrainConfig

METHODS = ("sclld", "gan-only", "cnn", "gp")

CONFIG_KEYS = (
    "corpus",
    "labelled_fraction",
    "iterations",
    "batch_size",
    "lr_g",
    "lr_d",
    "beta1",
    "beta2",
    "finetune_epochs_max",
    "early_stop_patience",
    "sobel",
    "method",
    "out_dir",
    "seed",
)


class ConfigError(ValueError):
    """Raised for unknown keys, bad types, or out-of-range values."""


@dataclass
class ExperimentConfig:
    """One experiment: corpus source, method, training knobs, output root.

    ``corpus`` is either a manifest path or ``{"synthetic": count}`` asking
    the harness to generate that many images under the output directory.
    """

    corpus: str | dict
    out_dir: str
    labelled_fraction: float = 0.1
    iterations: int = DEFAULT_ITERATIONS
    batch_size: int = 32
    lr_g: float = 1e-3
    lr_d: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    finetune_epochs_max: int = 100
    early_stop_patience: int = 5
    sobel: bool = True
    method: str = "sclld"
    seed: int = 0

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if isinstance(self.corpus, dict):
            if set(self.corpus) != {"synthetic"}:
                raise ConfigError(
                    f"corpus object must be {{\"synthetic\": count}}, got {self.corpus}"
                )
            count = self.corpus["synthetic"]
            if not isinstance(count, int) or isinstance(count, bool) or count <= 0:
                raise ConfigError(f"synthetic corpus count must be a positive integer, got {count!r}")
        elif not isinstance(self.corpus, str) or not self.corpus:
            raise ConfigError(f"corpus must be a manifest path or a synthetic spec, got {self.corpus!r}")
        if not isinstance(self.out_dir, str) or not self.out_dir:
            raise ConfigError(f"out_dir must be a non-empty path string, got {self.out_dir!r}")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if not isinstance(self.sobel, bool):
            raise ConfigError(f"sobel must be a boolean, got {self.sobel!r}")
        if not 0.0 < self.labelled_fraction <= 1.0:
            raise ConfigError(
                f"labelled_fraction must lie in (0, 1], got {self.labelled_fraction}"
            )
        for name in ("iterations", "batch_size", "finetune_epochs_max", "early_stop_patience", "seed"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"{name} must be an integer, got {value!r}")
        try:
            self.train_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            iterations=self.iterations,
            batch_size=self.batch_size,
            lr_g=self.lr_g,
            lr_d=self.lr_d,
            beta1=self.beta1,
            beta2=self.beta2,
            finetune_epochs_max=self.finetune_epochs_max,
            early_stop_patience=self.early_stop_patience,
            seed=self.seed,
        )

    def synthetic_count(self) -> int | None:
        return self.corpus["synthetic"] if isinstance(self.corpus, dict) else None

    def to_dict(self) -> dict:
        return {key: getattr(self, key) for key in CONFIG_KEYS}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError(f"configuration must be a JSON object, got {type(raw).__name__}")
    for key in raw:
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key '{key}'")
    for key in ("corpus", "out_dir"):
        if key not in raw:
            raise ConfigError(f"missing required config key '{key}'")
    numeric = {
        "labelled_fraction": float,
        "lr_g": float,
        "lr_d": float,
        "beta1": float,
        "beta2": float,
    }
    kwargs = dict(raw)
    for key, cast in numeric.items():
        if key in kwargs:
            value = kwargs[key]
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{key} must be a number, got {value!r}")
            kwargs[key] = cast(value)
    try:
        return ExperimentConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: Path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    return config_from_dict(raw)


def apply_overrides(config: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    """New config with the given fields replaced; flags beat file values."""
    merged = config.to_dict()
    for key, value in overrides.items():
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key '{key}'")
        if value is not None:
            merged[key] = value
    return config_from_dict(merged)
