"""Run configuration: one YAML file drives the whole pipeline.

Sections mirror the module config types (data, augment, encoder, loss,
pretrain, finetune, evaluate). Unknown sections or keys are errors, not
warnings. Stage seeds default to the top-level seed unless set
explicitly; the resolved snapshot written into each run directory pins
every seed, so feeding the snapshot back reproduces the run.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .augment import AugmentationConfig
from .contrast import LossConfig
from .encoder import BACKBONES, EncoderConfig
from .errors import ConfigurationError
from .train import FinetuneConfig, PretrainConfig

PROFILES = ("desk", "full")

# CPU-feasible ceilings enforced by the desk profile.
DESK_MAX_SIDE = 64
DESK_MAX_PRETRAIN_EPOCHS = 50
DESK_MAX_FINETUNE_EPOCHS = 10


@dataclass
class DataSection:
    side: int = 32
    channels: int = 3


@dataclass
class EncoderSection:
    backbone: str = "tiny-conv"
    representation_dim: int | None = None
    projection_hidden: int | None = None
    projection_dim: int = 128
    projection_bias: bool = True
    init: str = "random"
    weights_path: str | None = None

    def __post_init__(self) -> None:
        if self.backbone not in BACKBONES:
            raise ConfigurationError(f"backbone must be one of {BACKBONES}, got {self.backbone!r}")


@dataclass
class EvaluateSection:
    batch_size: int = 256


@dataclass
class RunConfig:
    profile: str = "desk"
    seed: int = 0
    data: DataSection = field(default_factory=DataSection)
    augment: AugmentationConfig = field(default_factory=AugmentationConfig)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    loss: LossConfig = field(default_factory=LossConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            backbone=self.encoder.backbone,
            input_side=self.data.side,
            input_channels=self.data.channels,
            representation_dim=self.encoder.representation_dim,
            projection_hidden=self.encoder.projection_hidden,
            projection_dim=self.encoder.projection_dim,
            projection_bias=self.encoder.projection_bias,
            init=self.encoder.init,
            weights_path=self.encoder.weights_path,
        )

    def validate(self) -> None:
        if self.profile not in PROFILES:
            raise ConfigurationError(f"profile must be one of {PROFILES}, got {self.profile!r}")
        if self.encoder.weights_path and not Path(self.encoder.weights_path).exists():
            raise ConfigurationError(f"weights_path does not exist: {self.encoder.weights_path}")
        if self.profile == "desk":
            if self.data.side > DESK_MAX_SIDE:
                raise ConfigurationError(
                    f"desk profile caps side at {DESK_MAX_SIDE}, got {self.data.side}"
                )
            if self.pretrain.epochs > DESK_MAX_PRETRAIN_EPOCHS:
                raise ConfigurationError(
                    f"desk profile caps pretrain epochs at {DESK_MAX_PRETRAIN_EPOCHS}"
                )
            if self.finetune.epochs > DESK_MAX_FINETUNE_EPOCHS:
                raise ConfigurationError(
                    f"desk profile caps finetune epochs at {DESK_MAX_FINETUNE_EPOCHS}"
                )


_SECTION_TYPES = {
    "data": DataSection,
    "augment": AugmentationConfig,
    "encoder": EncoderSection,
    "loss": LossConfig,
    "pretrain": PretrainConfig,
    "finetune": FinetuneConfig,
    "evaluate": EvaluateSection,
}
_SEEDED_SECTIONS = ("pretrain", "finetune")


def _build_section(name: str, cls, payload: dict[str, Any]):
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(payload) - allowed
    if unknown:
        raise ConfigurationError(f"unknown keys in section {name!r}: {sorted(unknown)}")
    try:
        return cls(**payload)
    except TypeError as exc:
        raise ConfigurationError(f"bad section {name!r}: {exc}") from exc


def config_from_dict(raw: dict[str, Any]) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigurationError("run config must be a mapping")
    allowed = {"profile", "seed", *_SECTION_TYPES}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigurationError(f"seed must be a non-negative integer, got {seed!r}")
    sections: dict[str, Any] = {}
    for name, cls in _SECTION_TYPES.items():
        payload = raw.get(name, {})
        if payload is None:
            payload = {}
        if not isinstance(payload, dict):
            raise ConfigurationError(f"section {name!r} must be a mapping")
        payload = dict(payload)
        if name in _SEEDED_SECTIONS and "seed" not in payload:
            payload["seed"] = seed
        sections[name] = _build_section(name, cls, payload)
    cfg = RunConfig(profile=raw.get("profile", "desk"), seed=seed, **sections)
    cfg.validate()
    return cfg


def config_to_dict(cfg: RunConfig) -> dict[str, Any]:
    out: dict[str, Any] = {"profile": cfg.profile, "seed": cfg.seed}
    for name in _SECTION_TYPES:
        section = dataclasses.asdict(getattr(cfg, name))
        for key, value in section.items():
            if isinstance(value, tuple):
                section[key] = list(value)
        out[name] = section
    return out


def load_config(path: str | Path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"{path}: invalid YAML ({exc})") from exc
    return config_from_dict(raw or {})


def save_config(cfg: RunConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=True)


def apply_override(raw: dict[str, Any], dotted_key: str, value_text: str) -> None:
    """Apply one ``--section.key value`` CLI override onto the raw config dict."""
    parts = dotted_key.split(".")
    if len(parts) == 1:
        section, key = None, parts[0]
    elif len(parts) == 2:
        section, key = parts
    else:
        raise ConfigurationError(f"override key {dotted_key!r} must be 'key' or 'section.key'")
    try:
        value = yaml.safe_load(value_text)
    except yaml.YAMLError:
        value = value_text
    if section is None:
        raw[key] = value
    else:
        raw.setdefault(section, {})
        if raw[section] is None:
            raw[section] = {}
        raw[section][key] = value
