"""Normalization kernels.

All three primitives operate on channel-major feature maps shaped
``(..., channels, frames)``:

* :func:`instance_norm` standardizes each channel row over the time axis;
* :func:`time_norm` standardizes each time column over the channel axis,
  preserving the relations between channels within a frame;
* :func:`adaptive_norm` re-colors an instance-normalized map with externally
  supplied per-channel statistics.

None of them carry learned affine parameters: scale and shift always come
from the adaptive statistics.  Variance is the population (biased) variance,
with eps=1e-5 inside the square root so constant rows map to zero.
"""

from __future__ import annotations

from typing import NamedTuple

import torch
from torch import Tensor

EPS = 1e-5


class ChannelStats(NamedTuple):
    """Per-channel mean/std pair used as adaptive scale and shift."""

    mean: Tensor  # (..., channels)
    std: Tensor   # (..., channels), non-negative


def _standardize(x: Tensor, dim: int) -> Tensor:
    mean = x.mean(dim=dim, keepdim=True)
    var = ((x - mean) ** 2).mean(dim=dim, keepdim=True)
    return (x - mean) / torch.sqrt(var + EPS)


def instance_norm(x: Tensor) -> Tensor:
    """Zero-mean unit-std per channel over time; x is (..., C, T)."""
    if x.shape[-1] < 1:
        raise ValueError("instance_norm needs at least one frame")
    return _standardize(x, dim=-1)


def time_norm(x: Tensor) -> Tensor:
    """Zero-mean unit-std per time frame over channels; x is (..., C, T)."""
    if x.shape[-2] < 1:
        raise ValueError("time_norm needs at least one channel")
    return _standardize(x, dim=-2)


def channel_stats(x: Tensor) -> ChannelStats:
    """Population mean/std of each channel row of a (..., C, T) map."""
    mean = x.mean(dim=-1)
    std = torch.sqrt(((x - mean.unsqueeze(-1)) ** 2).mean(dim=-1))
    return ChannelStats(mean, std)


def adaptive_norm(x: Tensor, stats: ChannelStats) -> Tensor:
    """instance_norm(x) * std + mean, broadcast per channel over time.

    The output's channel statistics match ``stats`` up to eps effects.
    """
    mean, std = stats
    if mean.shape[-1] != x.shape[-2] or std.shape[-1] != x.shape[-2]:
        raise ValueError(
            f"stats have {mean.shape[-1]} channels, map has {x.shape[-2]}")
    return instance_norm(x) * std.unsqueeze(-1) + mean.unsqueeze(-1)
