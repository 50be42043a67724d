"""Attention machinery: scaled dot-product attention, speaker attention, and
attentive statistics pooling.

Everything here is single-head and works on time-major tensors
``(..., frames, channels)``; leading batch dimensions broadcast.
"""

from __future__ import annotations

import math

import torch
from torch import Tensor, nn

from .norms import time_norm


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> tuple[Tensor, Tensor]:
    """softmax(q kᵀ / sqrt(C)) v.

    q is (..., T_q, C); k and v are (..., T_k, C).  Returns the attended
    output (..., T_q, C) and the weights (..., T_q, T_k); each weight row
    is a probability vector.
    """
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(f"q has {q.shape[-1]} channels, k has {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ValueError(f"k has {k.shape[-2]} frames, v has {v.shape[-2]}")
    logits = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
    weights = torch.softmax(logits, dim=-1)
    return weights @ v, weights


class SpeakerAttention(nn.Module):
    """Self-attention over speaker frames with a time-normalized query.

    The query is built from the per-frame (channel-axis) normalized input so
    that it carries channel relations rather than frame energy; keys and
    values see the raw features.  A residual connection is on by default so
    the block starts near identity.
    """

    def __init__(self, channels: int, residual: bool = True):
        super().__init__()
        self.w_q = nn.Linear(channels, channels, bias=False)
        self.w_k = nn.Linear(channels, channels, bias=False)
        self.w_v = nn.Linear(channels, channels, bias=False)
        self.residual = residual

    def forward(self, x: Tensor) -> Tensor:
        # x is time-major; per-frame normalization = time_norm of the
        # channel-major view.
        q_source = time_norm(x.transpose(-1, -2)).transpose(-1, -2)
        attended, _ = scaled_dot_attention(self.w_q(q_source), self.w_k(x), self.w_v(x))
        return x + attended if self.residual else attended


def attentive_stat_pooling(stats: Tensor, weight: Tensor) -> Tensor:
    """Pool L stacked statistic rows into one per-channel vector.

    stats is (..., L, C); weight is (C, C).  Attention logits are
    ``stats @ weight``, softmaxed over the L axis independently per channel,
    so the result is a per-channel convex combination of the L rows.
    """
    if stats.shape[-1] != weight.shape[0]:
        raise ValueError(
            f"stats have {stats.shape[-1]} channels, weight is {tuple(weight.shape)}")
    alpha = torch.softmax(stats @ weight, dim=-2)
    return (stats * alpha).sum(dim=-2)
