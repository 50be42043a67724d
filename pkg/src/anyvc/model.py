"""Encoder/decoder assembly of the conversion network.

Layout (channel-major ``(N, C, T)`` between layers, time-major inside the
attention blocks):

* content encoder: input expansion conv, then L x [residual conv block ->
  instance norm];
* speaker encoder: same, plus speaker attention per layer; the per-layer
  attention outputs form the speaker feature pyramid handed to the decoder;
* bottleneck: pitch concat, single GRU, dual-view conversion against the top
  pyramid level;
* decoder: L x [residual conv block -> conversion block], two refinement GRU
  layers, linear projection to mel bins;
* postnet: five convolutions predicting a residual added to the projection.
"""

from __future__ import annotations

import dataclasses
import datetime
from dataclasses import dataclass
from typing import Sequence

import torch
from torch import Tensor, nn

from .blocks import ConversionBlock, DualViewNorm
from .attention import SpeakerAttention
from .config import ModelConfig
from .norms import instance_norm

CHECKPOINT_VERSION = 1

# Parameter count of ModelConfig.paper(); asserted by the test suite as a
# regression guard against silent architecture drift.
PAPER_CONFIG_PARAM_COUNT = 60_255_392


class ConvBlock(nn.Module):
    """Residual block of two kernel-3, stride-1 convolutions."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv1d(channels, channels, kernel_size=3, padding=1)
        self.conv2 = nn.Conv1d(channels, channels, kernel_size=3, padding=1)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.conv2(torch.relu(self.conv1(x)))


class ContentEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.expand = nn.Conv1d(cfg.content_channels, cfg.channels, kernel_size=1)
        self.blocks = nn.ModuleList(ConvBlock(cfg.channels) for _ in range(cfg.layers))

    def forward(self, x: Tensor) -> Tensor:
        x = self.expand(x)
        for block in self.blocks:
            x = instance_norm(block(x))
        return x


class SpeakerEncoder(nn.Module):
    """Returns the per-layer attention outputs as a time-major pyramid."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.expand = nn.Conv1d(cfg.content_channels, cfg.channels, kernel_size=1)
        self.blocks = nn.ModuleList(ConvBlock(cfg.channels) for _ in range(cfg.layers))
        self.attentions = nn.ModuleList(
            SpeakerAttention(cfg.channels, residual=cfg.sa_residual)
            for _ in range(cfg.layers))

    def forward(self, x: Tensor) -> list[Tensor]:
        x = self.expand(x)
        pyramid = []
        for block, attention in zip(self.blocks, self.attentions):
            x = instance_norm(block(x))
            attended = attention(x.transpose(-1, -2))
            pyramid.append(attended)
            x = attended.transpose(-1, -2)
        return pyramid


class Bottleneck(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.gru = nn.GRU(cfg.channels + 1, cfg.channels,
                          num_layers=cfg.bottleneck_gru_layers, batch_first=True)
        self.dual = DualViewNorm(cfg.channels)

    def forward(self, content: Tensor, pitch: Tensor, top_level: Tensor) -> Tensor:
        if pitch.shape[-1] != content.shape[-1]:
            raise ValueError(
                f"pitch has {pitch.shape[-1]} frames, content has {content.shape[-1]}")
        x = torch.cat([content, pitch.unsqueeze(-2)], dim=-2).transpose(-1, -2)
        x, _ = self.gru(x)
        return self.dual(x, top_level).transpose(-1, -2)


def pyramid_index(layer: int, total_layers: int, pairing: str) -> int:
    """Which pyramid level decoder layer ``layer`` (0-based) consumes."""
    if pairing == "mirror":
        return total_layers - 1 - layer
    if pairing == "same":
        return layer
    raise ValueError(f"unknown pairing {pairing!r}")


class Decoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.pairing = cfg.pyramid_pairing
        self.blocks = nn.ModuleList(ConvBlock(cfg.channels) for _ in range(cfg.layers))
        self.conversions = nn.ModuleList(
            ConversionBlock(cfg.channels) for _ in range(cfg.layers))
        self.refine = nn.GRU(cfg.channels, cfg.channels,
                             num_layers=cfg.refine_gru_layers, batch_first=True)
        self.project = nn.Linear(cfg.channels, cfg.mel_bins)

    def forward(self, x: Tensor, pyramid: Sequence[Tensor]) -> Tensor:
        total = len(self.blocks)
        for layer, (block, conversion) in enumerate(zip(self.blocks, self.conversions)):
            x = block(x)
            level = pyramid[pyramid_index(layer, total, self.pairing)]
            x = conversion(x.transpose(-1, -2), level, pyramid).transpose(-1, -2)
        refined, _ = self.refine(x.transpose(-1, -2))
        return self.project(refined).transpose(-1, -2)


class PostNet(nn.Module):
    """Residual refinement stack; the last convolution starts at zero so the
    network begins as an identity around the decoder output."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        pad = cfg.postnet_kernel // 2
        dims = ([cfg.mel_bins] + [cfg.postnet_channels] * (cfg.postnet_layers - 1)
                + [cfg.mel_bins])
        self.convs = nn.ModuleList(
            nn.Conv1d(dims[i], dims[i + 1], kernel_size=cfg.postnet_kernel, padding=pad)
            for i in range(cfg.postnet_layers))
        nn.init.zeros_(self.convs[-1].weight)
        nn.init.zeros_(self.convs[-1].bias)

    def forward(self, mel: Tensor) -> Tensor:
        x = mel
        for conv in self.convs[:-1]:
            x = torch.tanh(conv(x))
        return self.convs[-1](x)


class VoiceConverter(nn.Module):
    """Full network: source content + pitch and target features to a mel map."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.content_encoder = ContentEncoder(cfg)
        self.speaker_encoder = SpeakerEncoder(cfg)
        self.bottleneck = Bottleneck(cfg)
        self.decoder = Decoder(cfg)
        self.postnet = PostNet(cfg)

    def encode_speaker(self, targets: Tensor | Sequence[Tensor]) -> list[Tensor]:
        """Build the speaker pyramid from one target or several utterances.

        In "concat" mode multiple utterances are joined along time before
        encoding; in "separate" mode each is encoded alone and the pyramids
        are joined along time level by level.
        """
        if isinstance(targets, Tensor):
            return self.speaker_encoder(targets)
        segments = list(targets)
        if not segments:
            raise ValueError("need at least one target utterance")
        if len(segments) == 1 or self.cfg.multi_target_mode == "concat":
            return self.speaker_encoder(torch.cat(segments, dim=-1))
        pyramids = [self.speaker_encoder(seg) for seg in segments]
        return [torch.cat(levels, dim=-2) for levels in zip(*pyramids)]

    def forward(self, content: Tensor, pitch: Tensor,
                targets: Tensor | Sequence[Tensor]) -> Tensor:
        squeeze = content.dim() == 2
        if squeeze:
            content = content.unsqueeze(0)
            pitch = pitch.unsqueeze(0)
            if isinstance(targets, Tensor):
                targets = targets.unsqueeze(0)
            else:
                targets = [t.unsqueeze(0) for t in targets]
        if pitch.shape[-1] != content.shape[-1]:
            raise ValueError(
                f"content and pitch are not aligned: {content.shape[-1]} vs "
                f"{pitch.shape[-1]} frames")
        pyramid = self.encode_speaker(targets)
        encoded = self.content_encoder(content)
        x = self.bottleneck(encoded, pitch, pyramid[-1])
        mel = self.decoder(x, pyramid)
        mel = mel + self.postnet(mel)
        return mel.squeeze(0) if squeeze else mel

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def build_model(cfg: ModelConfig, seed: int | None = None) -> VoiceConverter:
    """Construct a model; with a seed, initialization is reproducible."""
    if seed is not None:
        torch.manual_seed(seed)
    return VoiceConverter(cfg)


@dataclass
class Checkpoint:
    config: ModelConfig
    model: VoiceConverter
    optimizer_state: dict | None
    step: int
    metadata: dict
    feature_stats: dict | None  # {"mel_mean": (M,), "mel_std": (M,)} tensors


def save_checkpoint(path, model: VoiceConverter, optimizer=None, step: int = 0,
                    metadata: dict | None = None, feature_stats: dict | None = None):
    """Write a single self-describing archive of config + weights + state."""
    meta = {"created": datetime.datetime.now().isoformat(timespec="seconds")}
    meta.update(metadata or {})
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config": dataclasses.asdict(model.cfg),
        "weights": model.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
        "step": int(step),
        "metadata": meta,
        "feature_stats": feature_stats,
    }
    torch.save(payload, path)


def load_checkpoint(path, map_location="cpu") -> Checkpoint:
    """Load, validating the stored weight shapes against the stored config."""
    payload = torch.load(path, map_location=map_location, weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r}")
    cfg = ModelConfig(**payload["config"])
    model = VoiceConverter(cfg)
    expected = model.state_dict()
    stored = payload["weights"]
    if set(expected) != set(stored):
        missing = sorted(set(expected) - set(stored))
        extra = sorted(set(stored) - set(expected))
        raise ValueError(f"weight table mismatch: missing {missing}, extra {extra}")
    for name, tensor in expected.items():
        if tuple(stored[name].shape) != tuple(tensor.shape):
            raise ValueError(
                f"shape mismatch for {name}: checkpoint {tuple(stored[name].shape)}, "
                f"config implies {tuple(tensor.shape)}")
    model.load_state_dict(stored)
    return Checkpoint(cfg, model, payload["optimizer_state"], payload["step"],
                      payload["metadata"], payload.get("feature_stats"))
