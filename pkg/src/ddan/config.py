"""Training configuration and the flat ``key = value`` config file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    pass


@dataclass
class LossWeights:
    lambda1: float = 1.0  # triplet
    lambda2: float = 0.18  # adversarial transfer
    lambda3: float = 0.05  # similarity enhancement
    margin: float = 0.3
    tau: float = 2e-3
    k_similar: int = 8

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.k_similar < 0:
            raise ConfigError(f"k_similar must be >= 0, got {self.k_similar}")


@dataclass
class TrainConfig:
    epochs: int = 100
    P: int = 16
    K: int = 4
    base_lr: float = 0.1
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 40
    momentum: float = 0.9
    weights: LossWeights = field(default_factory=LossWeights)
    alpha: float = 0.05
    # SE switches on once this many epochs have completed
    se_start_epoch: int = 4
    seed: int = 0
    central_domain: int = 0
    holdout_domains: tuple[int, ...] = ()
    transfer_on_peripheral_only: bool = False
    checkpoint_every: int = 0
    embedding_dim: int = 64
    encoder_widths: tuple[int, ...] = (16, 32)
    use_bnneck: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.se_start_epoch < 0:
            raise ConfigError("se_start_epoch must be >= 0")
        if self.base_lr <= 0:
            raise ConfigError("base_lr must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.P < 1 or self.K < 1:
            raise ConfigError("P and K must be >= 1")
        if self.embedding_dim < 2:
            raise ConfigError("embedding_dim must be >= 2")

    def to_flat(self) -> dict[str, Any]:
        out = {}
        for f in fields(self):
            if f.name == "weights":
                out.update(dataclasses.asdict(self.weights))
            else:
                out[f.name] = getattr(self, f.name)
        return out

    @classmethod
    def from_flat(cls, values: dict[str, Any]) -> "TrainConfig":
        unknown = sorted(set(values) - set(config_keys()))
        if unknown:
            raise ConfigError(
                f"unknown config keys {unknown}; valid keys: {', '.join(config_keys())}"
            )
        w_names = {f.name for f in fields(LossWeights)}
        w = {k: v for k, v in values.items() if k in w_names}
        rest = {k: v for k, v in values.items() if k not in w_names}
        return cls(weights=LossWeights(**w), **rest)

    def replace(self, **changes) -> "TrainConfig":
        flat = self.to_flat()
        weights = changes.pop("weights", None)
        if weights is not None:
            flat.update(dataclasses.asdict(weights))
        flat.update(changes)
        return TrainConfig.from_flat(flat)


def _key_types() -> dict[str, type]:
    types = {}
    for f in fields(TrainConfig):
        if f.name == "weights":
            for wf in fields(LossWeights):
                types[wf.name] = type(getattr(LossWeights(), wf.name))
        else:
            types[f.name] = type(getattr(TrainConfig(), f.name))
    return types


def config_keys() -> list[str]:
    return list(_key_types())


def parse_value(key: str, text: str) -> Any:
    kind = _key_types()[key]
    text = text.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is tuple:
            return tuple(int(t) for t in text.replace(",", " ").split())
        return kind(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def parse_config_text(text: str) -> dict[str, Any]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values: dict[str, Any] = {}
    valid = set(config_keys())
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in valid:
            raise ConfigError(
                f"line {lineno}: unknown key {key!r}; valid keys: {', '.join(config_keys())}"
            )
        values[key] = parse_value(key, val)
    return values


def load_config(path: str | Path, **overrides) -> TrainConfig:
    values = parse_config_text(Path(path).read_text())
    values.update(overrides)
    return TrainConfig.from_flat(values)


def dump_config(config: TrainConfig) -> str:
    return "".join(f"{k} = {format_value(v)}\n" for k, v in config.to_flat().items())
