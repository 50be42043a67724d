import math

import pytest
import torch

from anyvc.attention import (SpeakerAttention, attentive_stat_pooling,
                             scaled_dot_attention)


def test_single_key_gives_unit_weight():
    q = torch.randn(5, 3)
    k = torch.randn(1, 3)
    v = torch.randn(1, 3)
    out, weights = scaled_dot_attention(q, k, v)
    assert torch.equal(weights, torch.ones(5, 1))
    assert torch.allclose(out, v.expand(5, 3))


def test_zero_query_gives_uniform_weights():
    k = torch.randn(7, 4)
    v = torch.randn(7, 4)
    out, weights = scaled_dot_attention(torch.zeros(2, 4), k, v)
    assert torch.allclose(weights, torch.full((2, 7), 1 / 7), atol=1e-7)
    assert torch.allclose(out, v.mean(dim=0).expand(2, 4), atol=1e-6)


def test_hand_computed_example():
    q = torch.tensor([[1.0, 0.0]])
    k = torch.eye(2)
    v = torch.tensor([[1.0, 2.0], [3.0, 4.0]])
    out, weights = scaled_dot_attention(q, k, v)
    assert torch.allclose(weights, torch.tensor([[0.6698, 0.3302]]), atol=1e-3)
    assert torch.allclose(out, torch.tensor([[1.6604, 2.6604]]), atol=1e-3)


def test_weight_rows_live_on_the_simplex():
    q = torch.randn(9, 6, dtype=torch.float64)
    k = torch.randn(13, 6, dtype=torch.float64)
    _, weights = scaled_dot_attention(q, k, k)
    assert float((weights.sum(dim=-1) - 1).abs().max()) <= 1e-6
    assert weights.min() >= 0


def test_softmax_shift_invariance():
    logits = torch.randn(6, 10, dtype=torch.float64)
    shifted = logits + 37.5
    assert torch.allclose(torch.softmax(logits, dim=-1),
                          torch.softmax(shifted, dim=-1), atol=1e-6)


def test_dimension_mismatch_raises():
    with pytest.raises(ValueError):
        scaled_dot_attention(torch.randn(2, 3), torch.randn(2, 4), torch.randn(2, 4))
    with pytest.raises(ValueError):
        scaled_dot_attention(torch.randn(2, 3), torch.randn(4, 3), torch.randn(5, 3))


def test_speaker_attention_uniform_when_projections_vanish():
    sa = SpeakerAttention(4, residual=False)
    with torch.no_grad():
        sa.w_q.weight.zero_()
        sa.w_k.weight.zero_()
        sa.w_v.weight.copy_(torch.eye(4))
    x = torch.randn(6, 4)
    out = sa(x)
    assert torch.allclose(out, x.mean(dim=0).expand(6, 4), atol=1e-6)


def test_speaker_attention_single_frame():
    sa = SpeakerAttention(5, residual=False)
    x = torch.randn(1, 5)
    assert torch.allclose(sa(x), sa.w_v(x), atol=1e-6)


def test_speaker_attention_residual_flag():
    torch.manual_seed(0)
    x = torch.randn(6, 4)
    sa = SpeakerAttention(4, residual=True)
    sa_plain = SpeakerAttention(4, residual=False)
    sa_plain.load_state_dict(sa.state_dict())
    assert torch.allclose(sa(x), x + sa_plain(x), atol=1e-6)


def test_speaker_attention_matches_direct_summation():
    torch.manual_seed(3)
    sa = SpeakerAttention(8, residual=True).double()
    x = torch.randn(4, 8, dtype=torch.float64)
    out = sa(x)

    # brute-force reimplementation with explicit loops
    w_q = sa.w_q.weight.detach().numpy()
    w_k = sa.w_k.weight.detach().numpy()
    w_v = sa.w_v.weight.detach().numpy()
    xn = x.numpy()
    frames, channels = xn.shape
    normed = (xn - xn.mean(axis=1, keepdims=True)) / (
        (xn.var(axis=1, keepdims=True) + 1e-5) ** 0.5)
    q = normed @ w_q.T
    k = xn @ w_k.T
    v = xn @ w_v.T
    expected = xn.copy()
    for i in range(frames):
        logits = [sum(q[i, c] * k[j, c] for c in range(channels))
                  / math.sqrt(channels) for j in range(frames)]
        m = max(logits)
        exp = [math.exp(l - m) for l in logits]
        z = sum(exp)
        for j in range(frames):
            for c in range(channels):
                expected[i, c] += exp[j] / z * v[j, c]
    assert float((out - torch.from_numpy(expected)).abs().max()) < 1e-6


def test_speaker_attention_shape_contract():
    for frames, channels in [(1, 1), (3, 2), (17, 5)]:
        sa = SpeakerAttention(channels)
        x = torch.randn(frames, channels)
        assert sa(x).shape == x.shape


def test_pooling_single_row_ignores_weight():
    stats = torch.randn(1, 6)
    w = torch.randn(6, 6)
    assert torch.allclose(attentive_stat_pooling(stats, w), stats[0], atol=1e-7)


def test_pooling_zero_weight_gives_column_mean():
    stats = torch.randn(5, 4)
    pooled = attentive_stat_pooling(stats, torch.zeros(4, 4))
    assert torch.allclose(pooled, stats.mean(dim=0), atol=1e-6)


def test_pooling_is_a_convex_combination():
    stats = torch.randn(7, 9, dtype=torch.float64)
    pooled = attentive_stat_pooling(stats, torch.randn(9, 9, dtype=torch.float64))
    assert bool((pooled >= stats.min(dim=0).values - 1e-9).all())
    assert bool((pooled <= stats.max(dim=0).values + 1e-9).all())


def test_pooling_dimension_mismatch():
    with pytest.raises(ValueError):
        attentive_stat_pooling(torch.randn(3, 4), torch.randn(5, 5))
