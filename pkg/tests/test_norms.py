import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from anyvc.gradcheck import relative_gradient_errors
from anyvc.norms import (ChannelStats, adaptive_norm, channel_stats,
                         instance_norm, time_norm)


def test_instance_norm_hand_example():
    x = torch.tensor([[1.0, 3.0], [2.0, 6.0]])
    expected = torch.tensor([[-1.0, 1.0], [-1.0, 1.0]])
    assert torch.allclose(instance_norm(x), expected, atol=1e-3)


def test_instance_norm_constant_row_is_zero():
    x = torch.tensor([[5.0, 5.0, 5.0]])
    assert torch.equal(instance_norm(x), torch.zeros(1, 3))


def test_instance_norm_moments():
    x = torch.randn(7, 50, dtype=torch.float64)
    out = instance_norm(x)
    assert float(out.mean(dim=-1).abs().max()) <= 1e-6
    assert float((out.std(dim=-1, unbiased=False) - 1).abs().max()) <= 1e-3


def test_time_norm_hand_example():
    x = torch.tensor([[1.0, 2.0], [3.0, 6.0]])
    out = time_norm(x)
    expected = torch.tensor([[-1.0, -1.0], [1.0, 1.0]])
    assert torch.allclose(out, expected, atol=1e-3)


def test_time_norm_constant_column_is_zero():
    x = torch.full((4, 3), 2.5)
    assert torch.equal(time_norm(x), torch.zeros(4, 3))


def test_time_norm_mirrors_instance_norm_on_transpose():
    x = torch.randn(6, 9, dtype=torch.float64)
    assert torch.allclose(time_norm(x), instance_norm(x.T).T, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(scale=st.floats(0.1, 10.0), shift=st.floats(-5.0, 5.0))
def test_instance_norm_affine_invariance(scale, shift):
    x = torch.randn(5, 20, dtype=torch.float64,
                    generator=torch.Generator().manual_seed(0))
    assert torch.allclose(instance_norm(scale * x + shift), instance_norm(x),
                          atol=1e-4)


@settings(max_examples=25, deadline=None)
@given(scale=st.floats(0.1, 10.0), shift=st.floats(-5.0, 5.0))
def test_time_norm_affine_invariance(scale, shift):
    x = torch.randn(20, 5, dtype=torch.float64,
                    generator=torch.Generator().manual_seed(0))
    assert torch.allclose(time_norm(scale * x + shift), time_norm(x), atol=1e-4)


def test_instance_norm_time_permutation_equivariance():
    x = torch.randn(4, 11, dtype=torch.float64)
    perm = torch.randperm(11)
    assert torch.allclose(instance_norm(x[:, perm]), instance_norm(x)[:, perm],
                          atol=1e-12)


def test_time_norm_channel_permutation_equivariance():
    x = torch.randn(9, 6, dtype=torch.float64)
    perm = torch.randperm(9)
    assert torch.allclose(time_norm(x[perm]), time_norm(x)[perm], atol=1e-12)


def test_adaptive_norm_identity_stats():
    x = torch.randn(4, 12)
    stats = ChannelStats(torch.zeros(4), torch.ones(4))
    assert torch.allclose(adaptive_norm(x, stats), instance_norm(x))


def test_adaptive_norm_hand_example():
    x = torch.tensor([[1.0, 3.0], [2.0, 6.0]])
    stats = ChannelStats(torch.tensor([1.0, -1.0]), torch.tensor([2.0, 3.0]))
    expected = torch.tensor([[-1.0, 3.0], [-4.0, 2.0]])
    assert torch.allclose(adaptive_norm(x, stats), expected, atol=1e-2)


def test_adaptive_norm_moment_matching():
    x = torch.randn(6, 32, dtype=torch.float64)
    z = 3.0 * torch.randn(6, 40, dtype=torch.float64) + 2.0
    stats = channel_stats(z)
    out = adaptive_norm(x, stats)
    got = channel_stats(out)
    assert torch.allclose(got.mean, stats.mean, atol=1e-3)
    assert torch.allclose(got.std, stats.std, atol=1e-2, rtol=1e-3)


def test_adaptive_norm_shape_mismatch():
    with pytest.raises(ValueError):
        adaptive_norm(torch.randn(4, 5), ChannelStats(torch.zeros(3), torch.ones(3)))


def test_norm_gradients_match_finite_differences():
    torch.manual_seed(5)
    proj = torch.randn(8, 12, dtype=torch.float64)
    x = torch.randn(8, 12, dtype=torch.float64, requires_grad=True)
    errors = relative_gradient_errors(lambda: (instance_norm(x) * proj).sum(),
                                      {"x": x})
    assert errors["x"] < 1e-3

    y = torch.randn(8, 12, dtype=torch.float64, requires_grad=True)
    mean = torch.randn(8, dtype=torch.float64, requires_grad=True)
    std = (torch.rand(8, dtype=torch.float64) + 0.5).requires_grad_()
    errors = relative_gradient_errors(
        lambda: (adaptive_norm(y, ChannelStats(mean, std)) * proj).sum(),
        {"y": y, "mean": mean, "std": std})
    assert max(errors.values()) < 1e-3
