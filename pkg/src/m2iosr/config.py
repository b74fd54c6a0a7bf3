"""Run configuration: one JSON file, strict about unknown keys.

Schema (every section and key optional; defaults shown)::

    {
      "encoder": {"input_shape": [1, 32, 32], "stage_widths": [64, 128, 128, 256],
                  "latent_dim": 32, "num_known": 6, "classifier_hidden": null},
      "discriminator": {"hidden": 512, "adapter_channels": 64},
      "train": {"beta1": 0.5, "beta2": 1.0, "gamma": 0.1, "a1": 0.7, "a2": 0.1, "a3": 0.2,
                "lr": 0.01, "momentum": 0.9, "lr_decay_every": 50, "lr_decay_factor": 0.1,
                "batch_size": 64, "epochs": 10, "seed": 0, "recon_weight": 0.0,
                "use_positive": true, "use_negative": true},
      "split": {"dataset": "mnist", "num_known": 6, "trial_seed": 0, "test_fraction": 0.2,
                "max_train_per_class": 1000, "resize_mode": "resize"},
      "eval": {"tau": 0.95, "pool_sizes": [10, 14, 19, 25, 32, 42, 54, 71, 100]},
      "paths": {"data_dir": "data", "data_format": "auto", "out_dir": "runs/default"}
    }

``encoder.num_known`` must equal ``split.num_known``. The environment
variable ``M2IOSR_DATA_DIR`` overrides ``paths.data_dir``.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .encoder import EncoderConfig
from .errors import ConfigError
from .trainer import TrainConfig

DATA_DIR_ENV = "M2IOSR_DATA_DIR"
DEFAULT_POOL_SIZES = (10, 14, 19, 25, 32, 42, 54, 71, 100)


@dataclass
class DiscriminatorConfig:
    hidden: int = 512
    adapter_channels: int = 64


@dataclass
class SplitConfig:
    dataset: str = "mnist"
    num_known: int = 6
    trial_seed: int = 0
    test_fraction: float = 0.2
    max_train_per_class: Optional[int] = 1000
    resize_mode: str = "resize"


@dataclass
class EvalConfig:
    tau: float = 0.95
    pool_sizes: list[int] = field(default_factory=lambda: list(DEFAULT_POOL_SIZES))

    def __post_init__(self) -> None:
        if not 0.0 < self.tau < 1.0:
            raise ConfigError(f"eval.tau must lie in (0, 1), got {self.tau}")


@dataclass
class PathsConfig:
    data_dir: str = "data"
    data_format: str = "auto"
    out_dir: str = "runs/default"


@dataclass
class RunConfig:
    encoder: EncoderConfig = field(default_factory=lambda: EncoderConfig(input_shape=(1, 32, 32)))
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def __post_init__(self) -> None:
        if self.encoder.num_known != self.split.num_known:
            raise ConfigError(
                f"encoder.num_known ({self.encoder.num_known}) != split.num_known ({self.split.num_known})"
            )

    def to_dict(self) -> dict:
        d = {f.name: asdict(getattr(self, f.name)) for f in fields(self)}
        d["encoder"] = self.encoder.to_dict()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @property
    def out_dir(self) -> Path:
        return Path(self.paths.out_dir)


_SECTIONS = {
    "encoder": EncoderConfig,
    "discriminator": DiscriminatorConfig,
    "train": TrainConfig,
    "split": SplitConfig,
    "eval": EvalConfig,
    "paths": PathsConfig,
}


def _build(cls, section: str, values) -> object:
    if not isinstance(values, dict):
        raise ConfigError(f"section '{section}' must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(f'{section}.{k}' for k in unknown)}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"invalid values in section '{section}': {exc}") from exc


def config_from_dict(data: dict, *, env: Optional[dict] = None) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = sorted(set(data) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    sections = {name: data.get(name, {}) for name in _SECTIONS}
    if isinstance(sections["encoder"], dict):
        sections["encoder"] = {"input_shape": (1, 32, 32), **sections["encoder"]}
    parts = {name: _build(cls, name, sections[name]) for name, cls in _SECTIONS.items()}
    env = os.environ if env is None else env
    if env.get(DATA_DIR_ENV):
        parts["paths"].data_dir = env[DATA_DIR_ENV]
    return RunConfig(**parts)


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        data = json.loads(p.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {p}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {p} is not valid JSON: {exc}") from exc
    return config_from_dict(data)
