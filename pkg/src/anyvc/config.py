"""Configuration dataclasses and the YAML config-file schema.

A config file is a single YAML document with up to three sections,
``model``, ``train`` and ``prepare``, whose keys mirror the dataclass
fields below.  CLI flags override file values.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import yaml


class ConfigurationError(Exception):
    """Raised when a run is misconfigured (bad adapters, mismatched frontends, ...)."""


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    ``content_channels`` is the width of the content frontend (256 for a
    pretrained-encoder adapter, 80 for the mel fallback), ``channels`` the
    internal model width, ``layers`` the per-encoder/decoder depth.
    """

    content_channels: int = 256
    channels: int = 512
    layers: int = 6
    mel_bins: int = 80
    sa_residual: bool = True
    pyramid_pairing: str = "mirror"  # "mirror" or "same"
    multi_target_mode: str = "concat"  # "concat" or "separate"
    bottleneck_gru_layers: int = 1
    refine_gru_layers: int = 2
    postnet_layers: int = 5
    postnet_channels: int = 512
    postnet_kernel: int = 5

    def __post_init__(self):
        for name in ("content_channels", "channels", "layers", "mel_bins",
                     "bottleneck_gru_layers", "refine_gru_layers",
                     "postnet_layers", "postnet_channels", "postnet_kernel"):
            if getattr(self, name) < 1:
                raise ValueError(f"ModelConfig.{name} must be positive")
        if self.pyramid_pairing not in ("mirror", "same"):
            raise ValueError("pyramid_pairing must be 'mirror' or 'same'")
        if self.multi_target_mode not in ("concat", "separate"):
            raise ValueError("multi_target_mode must be 'concat' or 'separate'")

    @classmethod
    def paper(cls) -> "ModelConfig":
        """Full-scale defaults (H=256, C=512, L=6)."""
        return cls()

    @classmethod
    def desk(cls, content_channels: int = 80) -> "ModelConfig":
        """Small profile that trains in minutes on a CPU."""
        return cls(content_channels=content_channels, channels=64, layers=2,
                   postnet_channels=64)


@dataclass
class TrainConfig:
    batch_size: int = 64
    epochs: int = 400
    steps: int | None = None  # overrides epochs-derived step count when set
    learning_rate: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    crop_frames: int = 128
    mask_max_fraction: float = 0.1
    seed: int = 0
    log_interval: int = 10
    checkpoint_interval: int = 500

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.crop_frames < 1:
            raise ValueError("batch_size, epochs and crop_frames must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.mask_max_fraction < 1.0:
            raise ValueError("mask_max_fraction must lie in [0, 1)")

    @classmethod
    def paper(cls) -> "TrainConfig":
        return cls()

    @classmethod
    def desk(cls) -> "TrainConfig":
        """Small-batch, higher-LR profile for CPU-scale experiments."""
        return cls(batch_size=8, epochs=10, learning_rate=1e-3)


@dataclass
class PrepareConfig:
    """Dataset split settings: 60/20/20 utterance splits within seen speakers,
    plus a held-out unseen-speaker pool for the U2U scenario."""

    train_fraction: float = 0.6
    valid_fraction: float = 0.2
    test_fraction: float = 0.2
    unseen_speaker_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        total = self.train_fraction + self.valid_fraction + self.test_fraction
        if abs(total - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")
        if not 0.0 <= self.unseen_speaker_fraction < 1.0:
            raise ValueError("unseen_speaker_fraction must lie in [0, 1)")


_SECTIONS = {"model": ModelConfig, "train": TrainConfig, "prepare": PrepareConfig}


def load_config(path) -> dict:
    """Read a YAML config file into {'model': ModelConfig, 'train': ..., 'prepare': ...}.

    Missing sections fall back to defaults; unknown keys are rejected.
    """
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ConfigurationError(f"config file {path} must contain a mapping")
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
    out = {}
    for name, cls in _SECTIONS.items():
        section = raw.get(name, {}) or {}
        valid = {f.name for f in dataclasses.fields(cls)}
        bad = set(section) - valid
        if bad:
            raise ConfigurationError(f"unknown keys in [{name}]: {sorted(bad)}")
        try:
            out[name] = cls(**section)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"invalid [{name}] section: {exc}") from exc
    return out


def save_config(path, model: ModelConfig, train: TrainConfig, prepare: PrepareConfig):
    doc = {
        "model": dataclasses.asdict(model),
        "train": dataclasses.asdict(train),
        "prepare": dataclasses.asdict(prepare),
    }
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)
