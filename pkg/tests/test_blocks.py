import math

import numpy as np
import pytest
import torch

from anyvc.blocks import (AttentiveStatsNorm, ConversionBlock, DualViewNorm,
                          LayerPooledNorm)
from anyvc.norms import channel_stats


def test_single_speaker_frame_collapses_to_channel_constants():
    torch.manual_seed(0)
    block = AttentiveStatsNorm(5, "channel")
    content = torch.randn(9, 5)
    speaker = torch.randn(1, 5)
    converted, stats = block(content, speaker)
    assert torch.equal(stats.alpha, torch.ones(9, 1))
    assert float(stats.frame_var.abs().max()) == 0.0
    # converted = IN(x) * sqrt(eps) + mean -> constant per channel up to eps
    spread = converted.max(dim=0).values - converted.min(dim=0).values
    assert float(spread.max()) < 1e-3


def test_variance_identity_against_bruteforce():
    torch.manual_seed(7)
    block = AttentiveStatsNorm(4, "channel").double()
    content = torch.randn(6, 4, dtype=torch.float64)
    speaker = torch.randn(6, 4, dtype=torch.float64)
    with torch.no_grad():
        _, stats = block(content, speaker)
    alpha = stats.alpha.numpy()
    values = block.w_v(speaker).detach().numpy()
    mean = stats.frame_mean.numpy()
    var_ref = np.zeros_like(mean)
    for i in range(6):
        for c in range(4):
            for j in range(6):
                var_ref[i, c] += alpha[i, j] * (values[j, c] - mean[i, c]) ** 2
    assert np.abs(stats.frame_var.numpy() - var_ref).max() < 1e-6


@pytest.mark.parametrize("view", ["channel", "time"])
def test_alpha_simplex_and_variance_floor(view):
    for seed in range(20):
        torch.manual_seed(seed)
        block = AttentiveStatsNorm(6, view).double()
        content = torch.randn(8, 6, dtype=torch.float64)
        speaker = torch.randn(5, 6, dtype=torch.float64)
        with torch.no_grad():
            _, stats = block(content, speaker)
        assert float((stats.alpha.sum(dim=-1) - 1).abs().max()) <= 1e-6
        assert stats.var_min >= -1e-6
        assert float(stats.frame_var.min()) >= 0.0


def test_speaker_frame_permutation_leaves_conversion_unchanged():
    torch.manual_seed(2)
    block = AttentiveStatsNorm(5, "channel").double()
    content = torch.randn(7, 5, dtype=torch.float64)
    speaker = torch.randn(9, 5, dtype=torch.float64)
    perm = torch.randperm(9)
    with torch.no_grad():
        converted, stats = block(content, speaker)
        converted_p, stats_p = block(content, speaker[perm])
    assert torch.allclose(stats_p.alpha, stats.alpha[:, perm], atol=1e-9)
    assert torch.allclose(stats_p.frame_mean, stats.frame_mean, atol=1e-9)
    assert torch.allclose(stats_p.frame_var, stats.frame_var, atol=1e-9)
    assert torch.allclose(converted_p, converted, atol=1e-9)


def test_converted_moments_match_reduced_stats():
    torch.manual_seed(4)
    block = AttentiveStatsNorm(6, "time").double()
    content = torch.randn(32, 6, dtype=torch.float64)
    speaker = torch.randn(12, 6, dtype=torch.float64)
    with torch.no_grad():
        converted, stats = block(content, speaker)
    got = channel_stats(converted.T)
    assert torch.allclose(got.mean, stats.reduced.mean, atol=1e-3)
    assert torch.allclose(got.std, stats.reduced.std, atol=1e-2, rtol=1e-3)


def test_channel_mismatch_raises():
    block = AttentiveStatsNorm(4, "channel")
    with pytest.raises(ValueError):
        block(torch.randn(5, 4), torch.randn(5, 3))


def test_pooled_norm_single_layer_matches_its_stats():
    torch.manual_seed(6)
    pool = LayerPooledNorm(5).double()
    content = torch.randn(24, 5, dtype=torch.float64)
    layer = torch.randn(10, 5, dtype=torch.float64)
    with torch.no_grad():
        converted, gstats = pool(content, [layer])
    assert torch.allclose(gstats.pooled.mean, layer.mean(dim=0), atol=1e-12)
    assert torch.allclose(gstats.pooled.std,
                          layer.var(dim=0, unbiased=False).sqrt(), atol=1e-12)
    got = channel_stats(converted.T)
    assert torch.allclose(got.mean, gstats.pooled.mean, atol=1e-3)
    assert torch.allclose(got.std, gstats.pooled.std, atol=1e-2, rtol=1e-3)


def test_pooled_norm_identical_layers_ignore_weights():
    torch.manual_seed(8)
    pool = LayerPooledNorm(4).double()
    layer = torch.randn(9, 4, dtype=torch.float64)
    content = torch.randn(6, 4, dtype=torch.float64)
    with torch.no_grad():
        _, gstats = pool(content, [layer, layer.clone(), layer.clone()])
    assert torch.allclose(gstats.pooled.mean, layer.mean(dim=0), atol=1e-9)
    assert torch.allclose(gstats.pooled.std,
                          layer.var(dim=0, unbiased=False).sqrt(), atol=1e-9)


def test_pooled_sigma_stays_within_layer_bounds():
    torch.manual_seed(9)
    pool = LayerPooledNorm(7).double()
    pyramid = [torch.randn(11, 7, dtype=torch.float64) for _ in range(3)]
    content = torch.randn(8, 7, dtype=torch.float64)
    with torch.no_grad():
        _, gstats = pool(content, pyramid)
    sigma_rows = torch.stack([p.var(dim=0, unbiased=False).sqrt() for p in pyramid])
    assert bool((gstats.pooled.std >= sigma_rows.min(dim=0).values - 1e-9).all())
    assert bool((gstats.pooled.std <= sigma_rows.max(dim=0).values + 1e-9).all())


def test_pooled_norm_rejects_empty_or_mismatched_pyramid():
    pool = LayerPooledNorm(4)
    with pytest.raises(ValueError):
        pool(torch.randn(5, 4), [])
    with pytest.raises(ValueError):
        pool(torch.randn(5, 4), [torch.randn(6, 3)])


def test_conversion_block_shape_contract():
    for t_c, t_s, channels, layers in [(3, 4, 2, 1), (8, 5, 6, 3), (16, 16, 4, 2)]:
        torch.manual_seed(channels)
        block = ConversionBlock(channels)
        pyramid = [torch.randn(t_s, channels) for _ in range(layers)]
        out = block(torch.randn(t_c, channels), pyramid[-1], pyramid)
        assert out.shape == (t_c, channels)


def test_degenerate_fuse_selects_channel_view():
    torch.manual_seed(12)
    channels = 5
    block = ConversionBlock(channels).double()
    with torch.no_grad():
        block.dual.fuse.weight.zero_()
        block.dual.fuse.bias.zero_()
        for c in range(channels):  # pick out the channel-view half
            block.dual.fuse.weight[c, c, 0] = 1.0
    content = torch.randn(7, channels, dtype=torch.float64)
    pyramid = [torch.randn(6, channels, dtype=torch.float64) for _ in range(2)]
    with torch.no_grad():
        out = block(content, pyramid[-1], pyramid)
        r_channel, _ = block.dual.channel_view(content, pyramid[-1])
        expected, _ = block.pooled(r_channel, pyramid)
    assert torch.allclose(out, expected, atol=1e-12)


def _numpy_norm(x, axis):
    mu = x.mean(axis=axis, keepdims=True)
    var = x.var(axis=axis, keepdims=True)
    return (x - mu) / np.sqrt(var + 1e-5)


def _numpy_attentive_norm(content, speaker, w_q, w_k, w_v, view):
    axis = 0 if view == "channel" else 1
    q = _numpy_norm(content, axis) @ w_q.T
    k = _numpy_norm(speaker, axis) @ w_k.T
    v = speaker @ w_v.T
    logits = q @ k.T / math.sqrt(content.shape[1])
    logits -= logits.max(axis=1, keepdims=True)
    alpha = np.exp(logits)
    alpha /= alpha.sum(axis=1, keepdims=True)
    mean = alpha @ v
    var = np.maximum(alpha @ (v * v) - mean * mean, 0.0)
    reduced_mean = mean.mean(axis=0)
    reduced_std = np.sqrt(var.mean(axis=0) + 1e-8)
    return _numpy_norm(content, 0) * reduced_std + reduced_mean


def test_conversion_block_matches_straight_line_oracle():
    torch.manual_seed(21)
    channels = 16
    block = ConversionBlock(channels).double()
    content = torch.randn(8, channels, dtype=torch.float64)
    pyramid_t = [torch.randn(6, channels, dtype=torch.float64) for _ in range(2)]
    with torch.no_grad():
        out = block(content, pyramid_t[-1], pyramid_t)

    p = {name: t.detach().numpy() for name, t in block.named_parameters()}
    c = content.numpy()
    s = pyramid_t[-1].numpy()
    r_ch = _numpy_attentive_norm(c, s, p["dual.channel_view.w_q.weight"],
                                 p["dual.channel_view.w_k.weight"],
                                 p["dual.channel_view.w_v.weight"], "channel")
    r_ti = _numpy_attentive_norm(c, s, p["dual.time_view.w_q.weight"],
                                 p["dual.time_view.w_k.weight"],
                                 p["dual.time_view.w_v.weight"], "time")
    cat = np.concatenate([r_ch, r_ti], axis=1)          # (T, 2C)
    fw = p["dual.fuse.weight"][:, :, 0]                 # (C, 2C)
    fused = cat @ fw.T + p["dual.fuse.bias"]

    mu = np.stack([lvl.numpy().mean(axis=0) for lvl in pyramid_t])
    sigma = np.stack([lvl.numpy().std(axis=0) for lvl in pyramid_t])

    def pool(stats, w):
        logits = stats @ w
        logits = logits - logits.max(axis=0, keepdims=True)
        a = np.exp(logits)
        a /= a.sum(axis=0, keepdims=True)
        return (stats * a).sum(axis=0)

    pooled_mu = pool(mu, p["pooled.w_mean"])
    pooled_sigma = pool(sigma, p["pooled.w_std"])
    expected = _numpy_norm(fused, 0) * pooled_sigma + pooled_mu
    assert np.abs(out.numpy() - expected).max() < 1e-5


def test_dual_view_norm_batched_matches_unbatched():
    torch.manual_seed(30)
    dual = DualViewNorm(6).double()
    content = torch.randn(3, 10, 6, dtype=torch.float64)
    speaker = torch.randn(3, 7, 6, dtype=torch.float64)
    with torch.no_grad():
        batched = dual(content, speaker)
        single = torch.stack([dual(content[i], speaker[i]) for i in range(3)])
    assert torch.allclose(batched, single, atol=1e-10)
