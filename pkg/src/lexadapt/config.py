"""Configuration dataclasses plus the JSON config-file surface.

The effective configuration is ``file values <- --set overrides``; unknown
keys are rejected so typos fail fast, and the merged result is echoed into
the output directory of every command for reproducibility.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

VARIANTS = ("base", "base-da", "vae-da", "decoder-da", "multitask-da")
DISCRIMINATOR_KINDS = ("domain", "language", "task")


@dataclass
class ModelConfig:
    char_emb_dim: int = 16
    char_hidden: int = 16
    char_max_len: int = 32
    d_model: int = 64
    n_heads: int = 4
    n_blocks: int = 2
    d_ff: int = 128
    token_max_len: int = 128
    pooling: str = "first"
    dropout: float = 0.1
    z_dim: int = 16
    vae_hidden: int = 32
    dec_hidden: int = 64
    disc_hidden: tuple = (64, 32)
    head_hidden: tuple = (64, 32)
    head_activation: str = "none"

    def feature_width(self, with_latent: bool) -> int:
        width = 2 * self.char_hidden + self.d_model
        return width + self.z_dim if with_latent else width


@dataclass
class LossWeights:
    """Fixed loss coefficients; the per-epoch ramp multiplies ``beta``."""

    alpha_vae: float = 0.1
    alpha_dec: float = 0.01
    alpha_task: float = 0.01
    beta: float = 0.2
    gamma: float = 0.1
    ml_weight: float = 1.0
    kind: str = "l1"

    def __post_init__(self):
        for name in ("alpha_vae", "alpha_dec", "alpha_task", "beta", "gamma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss weight {name} must be non-negative")
        if self.kind not in ("l1", "mse"):
            raise ConfigError(f"loss kind must be 'l1' or 'mse', got {self.kind!r}")


@dataclass
class OptimizerConfig:
    lr: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    clip_norm: float | None = 5.0

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")


@dataclass
class RunPlan:
    variant: str = "base"
    discriminator: str = "domain"
    epochs: int | None = None
    batch_size: int = 32
    seed: int = 0
    val_fraction: float = 0.2
    source_groups: list | None = None
    freeze_lambda: float | None = None
    interleave_ratio: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; valid: {list(VARIANTS)}")
        if self.discriminator not in DISCRIMINATOR_KINDS:
            raise ConfigError(
                f"unknown discriminator {self.discriminator!r}; valid: {list(DISCRIMINATOR_KINDS)}"
            )
        if self.epochs is not None and self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    @property
    def effective_epochs(self) -> int:
        if self.epochs is not None:
            return self.epochs
        return 12 if self.variant == "vae-da" else 8

    @property
    def adversarial(self) -> bool:
        return self.variant != "base"


@dataclass
class DataConfig:
    train: str | None = None
    val: str | None = None
    format: str = "complex"
    group: str | None = None
    simplification: str | None = None

    def __post_init__(self):
        if self.format not in ("complex", "cwi2018"):
            raise ConfigError(f"data format must be 'complex' or 'cwi2018', got {self.format!r}")


@dataclass
class Config:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    run: RunPlan = field(default_factory=RunPlan)
    data: DataConfig = field(default_factory=DataConfig)


_SECTIONS = {f.name: f.type for f in dataclasses.fields(Config)}


def _coerce(raw: str):
    """Interpret an override value: JSON literal first, bare string otherwise."""
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_overrides(pairs: list[str]) -> dict:
    tree: dict = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not of the form key=value")
        key, raw = pair.split("=", 1)
        parts = key.strip().split(".")
        if any(not p for p in parts):
            raise ConfigError(f"override key {key!r} is malformed")
        node = tree
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override key {key!r} conflicts with an earlier value")
        node[parts[-1]] = _coerce(raw)
    return tree


def _merge(base: dict, extra: dict) -> dict:
    merged = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _build_section(cls, values: dict, path: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown config key(s) under {path!r}: {sorted(unknown)}")
    coerced = {}
    for key, value in values.items():
        if isinstance(value, list):
            value = tuple(value) if key in ("disc_hidden", "head_hidden") else list(value)
        coerced[key] = value
    try:
        return cls(**coerced)
    except TypeError as exc:
        raise ConfigError(f"bad value under {path!r}: {exc}") from None


def config_from_dict(values: dict) -> Config:
    unknown = set(values) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown top-level config key(s): {sorted(unknown)}")
    sections = {}
    for name, cls in (("model", ModelConfig), ("loss", LossWeights),
                      ("optimizer", OptimizerConfig), ("run", RunPlan), ("data", DataConfig)):
        section = values.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"config section {name!r} must be a mapping")
        sections[name] = _build_section(cls, section, name)
    return Config(**sections)


def load_config(path: str | None, overrides: list[str] | None = None) -> Config:
    values: dict = {}
    if path is not None:
        try:
            values = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(values, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
    if overrides:
        values = _merge(values, parse_overrides(list(overrides)))
    return config_from_dict(values)


def config_to_dict(config: Config) -> dict:
    def encode(obj):
        if dataclasses.is_dataclass(obj):
            return {f.name: encode(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        if isinstance(obj, tuple):
            return list(obj)
        return obj

    return encode(config)


def save_effective_config(config: Config, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(config), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")
