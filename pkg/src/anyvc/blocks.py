"""Conversion blocks built from attention-weighted speaker statistics.

Three stages, all operating on time-major maps ``(..., frames, channels)``:

* :class:`AttentiveStatsNorm` cross-attends content frames to the frames of
  one speaker feature map, forms attention-weighted per-frame mean/variance
  of the speaker values, reduces them over time to per-channel statistics,
  and applies adaptive normalization with them.  The similarity view is
  selectable: "channel" normalizes the query/key sources per channel over
  time, "time" per frame over channels.
* :class:`DualViewNorm` runs both views and fuses the two converted maps
  with a pointwise convolution back to the model width.
* :class:`LayerPooledNorm` pools per-layer mean/std statistics of the whole
  speaker feature pyramid with attentive pooling and adaptively normalizes
  with the pooled global statistics.

:class:`ConversionBlock` chains DualViewNorm and LayerPooledNorm; it is the
per-decoder-layer conversion unit.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import torch
from torch import Tensor, nn

from .attention import attentive_stat_pooling, scaled_dot_attention
from .norms import ChannelStats, adaptive_norm, instance_norm, time_norm

# Variance of attention-weighted values is non-negative in exact arithmetic;
# floating point can dip marginally below zero, so it is clamped before the
# square root and cushioned by VAR_EPS inside it.
VAR_EPS = 1e-8


def _norm_channelwise(x: Tensor) -> Tensor:
    """Per-channel standardization over time of a time-major map."""
    return instance_norm(x.transpose(-1, -2)).transpose(-1, -2)


def _norm_framewise(x: Tensor) -> Tensor:
    """Per-frame standardization over channels of a time-major map."""
    return time_norm(x.transpose(-1, -2)).transpose(-1, -2)


_VIEWS = {"channel": _norm_channelwise, "time": _norm_framewise}


class AttentiveStats(NamedTuple):
    alpha: Tensor       # (..., T_c, T_s) attention weights, rows sum to 1
    frame_mean: Tensor  # (..., T_c, C) attention-weighted means
    frame_var: Tensor   # (..., T_c, C) attention-weighted variances, clamped >= 0
    reduced: ChannelStats
    var_min: float      # pre-clamp minimum of frame_var (clamp telemetry)
    clamp_fraction: float


class GlobalStats(NamedTuple):
    layer_mean: Tensor  # (..., L, C)
    layer_std: Tensor   # (..., L, C)
    pooled: ChannelStats


class AttentiveStatsNorm(nn.Module):
    """One similarity view of the local adaptive-normalization stage."""

    def __init__(self, channels: int, view: str):
        super().__init__()
        if view not in _VIEWS:
            raise ValueError(f"view must be one of {sorted(_VIEWS)}, got {view!r}")
        self.view = view
        self.w_q = nn.Linear(channels, channels, bias=False)
        self.w_k = nn.Linear(channels, channels, bias=False)
        self.w_v = nn.Linear(channels, channels, bias=False)
        self.last_var_min = 0.0
        self.last_clamp_fraction = 0.0

    def forward(self, content: Tensor, speaker: Tensor) -> tuple[Tensor, AttentiveStats]:
        if content.shape[-1] != speaker.shape[-1]:
            raise ValueError(
                f"content has {content.shape[-1]} channels, speaker has {speaker.shape[-1]}")
        norm = _VIEWS[self.view]
        values = self.w_v(speaker)
        _, alpha = scaled_dot_attention(
            self.w_q(norm(content)), self.w_k(norm(speaker)), values)
        mean_map = alpha @ values
        var_map = alpha @ (values * values) - mean_map * mean_map
        with torch.no_grad():
            self.last_var_min = float(var_map.min())
            self.last_clamp_fraction = float((var_map < 0).float().mean())
        var_map = var_map.clamp_min(0.0)
        reduced = ChannelStats(
            mean_map.mean(dim=-2),
            torch.sqrt(var_map.mean(dim=-2) + VAR_EPS),
        )
        converted = adaptive_norm(content.transpose(-1, -2), reduced).transpose(-1, -2)
        stats = AttentiveStats(alpha, mean_map, var_map, reduced,
                               self.last_var_min, self.last_clamp_fraction)
        return converted, stats


class DualViewNorm(nn.Module):
    """Both similarity views fused back to the model width.

    The fuse convolution sees the channel-view result in channels [0, C) and
    the time-view result in [C, 2C).
    """

    def __init__(self, channels: int):
        super().__init__()
        self.channel_view = AttentiveStatsNorm(channels, "channel")
        self.time_view = AttentiveStatsNorm(channels, "time")
        self.fuse = nn.Conv1d(2 * channels, channels, kernel_size=1)

    def forward(self, content: Tensor, speaker: Tensor) -> Tensor:
        r_channel, _ = self.channel_view(content, speaker)
        r_time, _ = self.time_view(content, speaker)
        stacked = torch.cat([r_channel, r_time], dim=-1).transpose(-1, -2)
        if stacked.dim() == 2:
            return self.fuse(stacked.unsqueeze(0)).squeeze(0).transpose(-1, -2)
        return self.fuse(stacked).transpose(-1, -2)


class LayerPooledNorm(nn.Module):
    """Adaptive normalization with attentively pooled whole-pyramid statistics."""

    def __init__(self, channels: int):
        super().__init__()
        self.w_mean = nn.Parameter(torch.empty(channels, channels))
        self.w_std = nn.Parameter(torch.empty(channels, channels))
        nn.init.kaiming_uniform_(self.w_mean, a=5 ** 0.5)
        nn.init.kaiming_uniform_(self.w_std, a=5 ** 0.5)

    def forward(self, content: Tensor,
                pyramid: Sequence[Tensor]) -> tuple[Tensor, GlobalStats]:
        if len(pyramid) == 0:
            raise ValueError("speaker feature pyramid is empty")
        channels = content.shape[-1]
        for level in pyramid:
            if level.shape[-1] != channels:
                raise ValueError(
                    f"pyramid level has {level.shape[-1]} channels, expected {channels}")
        means = torch.stack([level.mean(dim=-2) for level in pyramid], dim=-2)
        stds = torch.stack(
            [torch.sqrt(level.var(dim=-2, unbiased=False)) for level in pyramid],
            dim=-2)
        pooled = ChannelStats(
            attentive_stat_pooling(means, self.w_mean),
            attentive_stat_pooling(stds, self.w_std),
        )
        converted = adaptive_norm(content.transpose(-1, -2), pooled).transpose(-1, -2)
        return converted, GlobalStats(means, stds, pooled)


class ConversionBlock(nn.Module):
    """Per-decoder-layer conversion: dual-view local stage, then global stage."""

    def __init__(self, channels: int):
        super().__init__()
        self.dual = DualViewNorm(channels)
        self.pooled = LayerPooledNorm(channels)

    def forward(self, content: Tensor, speaker: Tensor,
                pyramid: Sequence[Tensor]) -> Tensor:
        fused = self.dual(content, speaker)
        converted, _ = self.pooled(fused, pyramid)
        return converted
