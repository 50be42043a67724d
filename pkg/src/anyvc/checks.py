"""Self-contained invariant, gradient, and oracle checks.

This is the library behind the ``check`` CLI command; the pytest suite runs
the same functions.  Every check returns a :class:`CheckResult` instead of
raising, so the command can print a full table and exit nonzero on failure.
No external models or downloads are involved.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
import torch

from .attention import SpeakerAttention, attentive_stat_pooling, scaled_dot_attention
from .blocks import AttentiveStatsNorm, ConversionBlock, DualViewNorm, LayerPooledNorm
from .config import ModelConfig
from .evaluation import (ScorePair, cer, edit_distance, eer_threshold,
                         sv_accept_rate, wer)
from .gradcheck import module_gradient_errors, relative_gradient_errors
from .model import Bottleneck, ConvBlock, Decoder, PostNet, build_model
from .norms import ChannelStats, adaptive_norm, instance_norm, time_norm
from .training import combined_loss, l1_loss, time_mask

GRAD_TOL = 1e-3


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _finish(name, failures, started, ok_detail=""):
    passed = not failures
    detail = ok_detail if passed else "; ".join(failures[:4])
    return CheckResult(name, passed, detail, time.time() - started)


# --- criterion 1: kernel invariants -------------------------------------------

def _duan_reference(content, speaker, module):
    """Pure-numpy recomputation of the attentive statistics, with the
    weighted mean/variance accumulated in explicit loops."""
    w_q = module.w_q.weight.detach().numpy().astype(np.float64)
    w_k = module.w_k.weight.detach().numpy().astype(np.float64)
    w_v = module.w_v.weight.detach().numpy().astype(np.float64)

    def normalize(x):
        axis = 0 if module.view == "channel" else 1
        mu = x.mean(axis=axis, keepdims=True)
        var = x.var(axis=axis, keepdims=True)
        return (x - mu) / np.sqrt(var + 1e-5)

    q = normalize(content) @ w_q.T
    k = normalize(speaker) @ w_k.T
    v = speaker @ w_v.T
    logits = q @ k.T / math.sqrt(content.shape[1])
    logits -= logits.max(axis=1, keepdims=True)
    alpha = np.exp(logits)
    alpha /= alpha.sum(axis=1, keepdims=True)

    t_c, channels = content.shape
    t_s = speaker.shape[0]
    mean = np.zeros((t_c, channels))
    var = np.zeros((t_c, channels))
    for i in range(t_c):
        for c in range(channels):
            for j in range(t_s):
                mean[i, c] += alpha[i, j] * v[j, c]
            for j in range(t_s):
                var[i, c] += alpha[i, j] * (v[j, c] - mean[i, c]) ** 2
    return alpha, mean, var


def check_kernel_invariants(seeds: int = 100) -> CheckResult:
    """Normalization statistics, softmax simplex, the attention-weighted
    variance identity, and pooled-statistics convexity over random seeds."""
    started = time.time()
    failures = []
    for seed in range(seeds):
        torch.manual_seed(seed)
        rng = np.random.default_rng(seed)
        channels = int(rng.integers(2, 10))
        t_c = int(rng.integers(2, 12))
        t_s = int(rng.integers(2, 12))

        # stats checks need enough entries per axis that the eps inside the
        # square root stays below the 1e-3 tolerance
        x = torch.randn(int(rng.integers(8, 16)), int(rng.integers(8, 16)),
                        dtype=torch.float64)
        for label, normed, dim in (("IN", instance_norm(x), -1),
                                   ("TIN", time_norm(x), -2)):
            mean = normed.mean(dim=dim).abs().max()
            std = ((normed ** 2).mean(dim=dim)).sqrt()
            if float(mean) > 1e-6:
                failures.append(f"seed {seed}: {label} mean {float(mean):.2e}")
            if float((std - 1).abs().max()) > 1e-3:
                failures.append(f"seed {seed}: {label} std off by "
                                f"{float((std - 1).abs().max()):.2e}")

        q = torch.randn(t_c, channels, dtype=torch.float64)
        k = torch.randn(t_s, channels, dtype=torch.float64)
        _, weights = scaled_dot_attention(q, k, k)
        if float((weights.sum(dim=-1) - 1).abs().max()) > 1e-6 or weights.min() < 0:
            failures.append(f"seed {seed}: attention rows leave the simplex")

        module = AttentiveStatsNorm(channels, "channel").double()
        content = torch.randn(t_c, channels, dtype=torch.float64)
        speaker = torch.randn(t_s, channels, dtype=torch.float64)
        with torch.no_grad():
            _, stats = module(content, speaker)
        alpha_ref, mean_ref, var_ref = _duan_reference(
            content.numpy(), speaker.numpy(), module)
        if np.abs(stats.alpha.numpy() - alpha_ref).max() > 1e-6:
            failures.append(f"seed {seed}: attention weights disagree with oracle")
        if np.abs(stats.frame_mean.numpy() - mean_ref).max() > 1e-6:
            failures.append(f"seed {seed}: weighted mean disagrees with oracle")
        if np.abs(stats.frame_var.numpy() - var_ref).max() > 1e-6:
            failures.append(f"seed {seed}: variance identity broken")
        if stats.var_min < -1e-6:
            failures.append(f"seed {seed}: pre-clamp variance {stats.var_min:.2e}")

        pool = LayerPooledNorm(channels).double()
        pyramid = [torch.randn(t_s, channels, dtype=torch.float64) for _ in range(3)]
        with torch.no_grad():
            _, gstats = pool(content, pyramid)
        for pooled, rows in ((gstats.pooled.mean, gstats.layer_mean),
                             (gstats.pooled.std, gstats.layer_std)):
            lo = rows.min(dim=-2).values - 1e-9
            hi = rows.max(dim=-2).values + 1e-9
            if bool((pooled < lo).any()) or bool((pooled > hi).any()):
                failures.append(f"seed {seed}: pooled stats outside layer bounds")
    return _finish("kernel invariants", failures, started,
                   f"{seeds} seeds, all identities hold")


# --- criterion 2: gradient verification ---------------------------------------

def _projection(shape):
    torch.manual_seed(808)
    return torch.randn(*shape, dtype=torch.float64)


def _norm_kernel_cases():
    torch.manual_seed(11)
    c, t = 8, 12
    proj = _projection((c, t))
    x = torch.randn(c, t, dtype=torch.float64, requires_grad=True)
    yield "instance_norm", lambda: (instance_norm(x) * proj).sum(), {"x": x}
    x2 = torch.randn(c, t, dtype=torch.float64, requires_grad=True)
    yield "time_norm", lambda: (time_norm(x2) * proj).sum(), {"x": x2}
    x3 = torch.randn(c, t, dtype=torch.float64, requires_grad=True)
    mean = torch.randn(c, dtype=torch.float64, requires_grad=True)
    std = (torch.rand(c, dtype=torch.float64) + 0.5).requires_grad_()
    yield ("adaptive_norm",
           lambda: (adaptive_norm(x3, ChannelStats(mean, std)) * proj).sum(),
           {"x": x3, "mean": mean, "std": std})


def check_gradients() -> CheckResult:
    """Finite-difference verification of every trainable block at C=8, T=12,
    L=2 in double precision."""
    started = time.time()
    failures = []
    c, t, layers = 8, 12, 2

    def record(name, errors):
        worst = max(errors.values())
        if worst >= GRAD_TOL:
            bad = max(errors, key=errors.get)
            failures.append(f"{name}.{bad}: rel err {worst:.2e}")

    for name, fn, tensors in _norm_kernel_cases():
        record(name, relative_gradient_errors(fn, tensors))

    torch.manual_seed(21)
    proj_tc = _projection((t, c))

    sa = SpeakerAttention(c).double()
    x_sa = torch.randn(t, c, dtype=torch.float64, requires_grad=True)
    record("speaker_attention",
           module_gradient_errors(sa, lambda: (sa(x_sa) * proj_tc).sum(), [x_sa]))

    w_pool = torch.randn(c, c, dtype=torch.float64, requires_grad=True)
    stats_in = torch.randn(3, c, dtype=torch.float64, requires_grad=True)
    record("attentive_stat_pooling", relative_gradient_errors(
        lambda: (attentive_stat_pooling(stats_in, w_pool) * _projection((c,))).sum(),
        {"stats": stats_in, "weight": w_pool}))

    for view in ("channel", "time"):
        torch.manual_seed(31)
        module = AttentiveStatsNorm(c, view).double()
        content = torch.randn(t, c, dtype=torch.float64, requires_grad=True)
        speaker = torch.randn(t - 2, c, dtype=torch.float64, requires_grad=True)
        record(f"attentive_stats_norm[{view}]", module_gradient_errors(
            module, lambda: (module(content, speaker)[0] * proj_tc).sum(),
            [content, speaker]))

    torch.manual_seed(41)
    dual = DualViewNorm(c).double()
    content = torch.randn(t, c, dtype=torch.float64, requires_grad=True)
    speaker = torch.randn(t - 2, c, dtype=torch.float64, requires_grad=True)
    record("dual_view_norm", module_gradient_errors(
        dual, lambda: (dual(content, speaker) * proj_tc).sum(), [content, speaker]))

    torch.manual_seed(51)
    pool = LayerPooledNorm(c).double()
    content_g = torch.randn(t, c, dtype=torch.float64, requires_grad=True)
    pyramid = [torch.randn(t - 2, c, dtype=torch.float64, requires_grad=True)
               for _ in range(layers)]
    record("layer_pooled_norm", module_gradient_errors(
        pool, lambda: (pool(content_g, pyramid)[0] * proj_tc).sum(),
        [content_g, *pyramid]))

    torch.manual_seed(61)
    block = ConversionBlock(c).double()
    content_b = torch.randn(t, c, dtype=torch.float64, requires_grad=True)
    pyramid_b = [torch.randn(t - 2, c, dtype=torch.float64, requires_grad=True)
                 for _ in range(layers)]
    record("conversion_block", module_gradient_errors(
        block,
        lambda: (block(content_b, pyramid_b[-1], pyramid_b) * proj_tc).sum(),
        [content_b, *pyramid_b]))

    torch.manual_seed(71)
    conv = ConvBlock(c).double()
    x_conv = torch.randn(1, c, t, dtype=torch.float64, requires_grad=True)
    record("conv_block", module_gradient_errors(
        conv, lambda: (conv(x_conv) * _projection((1, c, t))).sum(), [x_conv]))

    cfg = ModelConfig(content_channels=6, channels=c, layers=layers, mel_bins=4,
                      postnet_channels=c, postnet_layers=5)

    torch.manual_seed(81)
    bottleneck = Bottleneck(cfg).double()
    enc = torch.randn(1, c, t, dtype=torch.float64, requires_grad=True)
    pitch = torch.randn(1, t, dtype=torch.float64, requires_grad=True)
    top = torch.randn(1, t - 2, c, dtype=torch.float64, requires_grad=True)
    record("bottleneck_gru+dual", module_gradient_errors(
        bottleneck,
        lambda: (bottleneck(enc, pitch, top) * _projection((1, c, t))).sum(),
        [enc, pitch, top]))

    torch.manual_seed(91)
    decoder = Decoder(cfg).double()
    x_dec = torch.randn(1, c, t, dtype=torch.float64, requires_grad=True)
    pyramid_d = [torch.randn(1, t - 2, c, dtype=torch.float64, requires_grad=True)
                 for _ in range(layers)]
    record("decoder", module_gradient_errors(
        decoder,
        lambda: (decoder(x_dec, pyramid_d) * _projection((1, cfg.mel_bins, t))).sum(),
        [x_dec, *pyramid_d]))

    torch.manual_seed(101)
    postnet = PostNet(cfg).double()
    # zero-init of the last layer is a stationary point for its weight under
    # a pure-sum loss; nudge all postnet weights off zero before checking
    with torch.no_grad():
        for p in postnet.parameters():
            p.add_(0.05 * torch.randn_like(p))
    mel_in = torch.randn(1, cfg.mel_bins, t, dtype=torch.float64, requires_grad=True)
    record("postnet", module_gradient_errors(
        postnet,
        lambda: ((mel_in + postnet(mel_in)) * _projection((1, cfg.mel_bins, t))).sum(),
        [mel_in]))

    return _finish("gradient verification", failures, started,
                   f"all blocks under rel err {GRAD_TOL:g}")


# --- criterion 3: loss arithmetic ---------------------------------------------

def check_loss_arithmetic() -> CheckResult:
    started = time.time()
    failures = []
    y = torch.zeros(2, 2)
    y_hat = torch.ones(2, 2)
    if abs(float(l1_loss(y, y_hat)) - 2.0) > 1e-9:
        failures.append("2x2 unit-difference case is not 2.0")
    if abs(float(l1_loss(torch.zeros(1, 1), torch.ones(1, 1))) - 1.0) > 1e-9:
        failures.append("1x1 unit case is not 1.0")
    if float(l1_loss(y_hat, y_hat)) != 0.0:
        failures.append("identity case is not exactly 0")
    total, bundle = combined_loss(torch.zeros(1, 1), torch.ones(1, 1),
                                  torch.full((1, 1), 3.0))
    if abs(float(total) - 4.0) > 1e-9:
        failures.append(f"scalar combined case is {float(total)}, expected 4.0")
    if abs(bundle.total - (bundle.recon + bundle.siam_recon) / 2
           - bundle.consistency) > 1e-9:
        failures.append("bundle total does not match its parts")
    if bundle.consistency > bundle.recon + bundle.siam_recon + 1e-12:
        failures.append("triangle inequality violated")
    return _finish("loss arithmetic", failures, started, "hand cases exact")


# --- criterion 5: shape and pipeline contracts ---------------------------------

def check_shape_contracts(cases: int = 20, seed: int = 0) -> CheckResult:
    started = time.time()
    failures = []
    cfg = ModelConfig(content_channels=6, channels=16, layers=2, mel_bins=80,
                      postnet_channels=16)
    model = build_model(cfg, seed=seed)
    model.eval()
    rng = np.random.default_rng(seed)
    for case in range(cases):
        t_src = int(rng.integers(30, 90))
        t_tgt = int(rng.integers(20, 80))
        k = (1, 3, 5)[case % 3]
        content = torch.randn(cfg.content_channels, t_src)
        pitch = torch.randn(t_src)
        targets = [torch.randn(cfg.content_channels, t_tgt) for _ in range(k)]
        with torch.no_grad():
            out = model(content, pitch, targets)
            single = model(content, pitch, targets[:1])
        if out.shape != (cfg.mel_bins, t_src):
            failures.append(f"case {case}: got {tuple(out.shape)}")
        if k > 1 and float((out - single).abs().sum()) <= 0.0:
            failures.append(f"case {case}: k={k} output identical to one-shot")
    return _finish("shape/pipeline contracts", failures, started,
                   f"{cases} random (T_source, T_target, k) cases")


# --- criterion 6: metric oracles ------------------------------------------------

def _edit_distance_reference(a, b):
    from functools import lru_cache

    @lru_cache(maxsize=None)
    def rec(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(rec(i - 1, j) + 1, rec(i, j - 1) + 1,
                   rec(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return rec(len(a), len(b))


def check_metric_oracles(pairs: int = 1000, seed: int = 0) -> CheckResult:
    started = time.time()
    failures = []
    rng = np.random.default_rng(seed)
    alphabet = "abc"

    def random_string():
        return "".join(rng.choice(list(alphabet), size=rng.integers(0, 9)))

    for i in range(pairs):
        a, b, c = random_string(), random_string(), random_string()
        d_ab, d_ba = edit_distance(a, b), edit_distance(b, a)
        if d_ab != d_ba:
            failures.append(f"pair {i}: asymmetric distance")
        if edit_distance(a, a) != 0:
            failures.append(f"pair {i}: non-zero self distance")
        if d_ab > edit_distance(a, c) + edit_distance(c, b):
            failures.append(f"pair {i}: triangle inequality violated")
        if d_ab != _edit_distance_reference(a, b):
            failures.append(f"pair {i}: disagrees with recursive reference")

    hand = [
        (wer("the cat", "the bat"), 0.5),
        (cer("the cat", "the bat"), 1 / 6),
        (wer("a", "a b c"), 2.0),
        (wer("the cat", "the cat"), 0.0),
        (edit_distance("abc", "axc"), 1),
        (edit_distance("", "abc"), 3),
    ]
    for got, want in hand:
        if abs(got - want) > 1e-12:
            failures.append(f"hand case: got {got}, expected {want}")

    theta, eer = eer_threshold(ScorePair([0.7, 0.8, 0.9], [0.1, 0.2, 0.3]))
    if eer != 0.0 or not 0.3 < theta <= 0.7:
        failures.append(f"separated scores gave theta={theta}, eer={eer}")
    same = [0.1, 0.4, 0.4, 0.8]
    _, eer_same = eer_threshold(ScorePair(same, list(same)))
    if abs(eer_same - 0.5) > 1e-12:
        failures.append(f"identical distributions gave eer={eer_same}")

    genuine = np.clip(rng.normal(0.6, 0.15, 200), -1, 1)
    impostor = np.clip(rng.normal(0.2, 0.15, 300), -1, 1)
    scores = ScorePair(list(genuine), list(impostor))
    theta, eer = eer_threshold(scores)
    grid = np.linspace(-1.0, 1.0, 20001)
    far = (impostor[None, :] >= grid[:, None]).mean(axis=1)
    frr = (genuine[None, :] < grid[:, None]).mean(axis=1)
    best = int(np.argmin(np.abs(far - frr)))
    union = np.unique(np.concatenate([genuine, impostor]))
    max_gap = float(np.diff(union).max())
    if abs(theta - grid[best]) > max_gap + (grid[1] - grid[0]):
        failures.append(f"threshold {theta:.4f} far from grid oracle {grid[best]:.4f}")
    if abs(eer - (far[best] + frr[best]) / 2) > 1.0 / min(len(genuine), len(impostor)):
        failures.append(f"eer {eer:.4f} disagrees with grid oracle")
    bound = 1.0 / min(len(genuine), len(impostor))
    far_t = float((impostor >= theta).mean())
    frr_t = float((genuine < theta).mean())
    if abs(far_t - frr_t) > bound:
        failures.append("FAR/FRR gap exceeds the discrete step bound")

    if sv_accept_rate([0.2, 0.6, 0.9], 0.5) != 2 / 3:
        failures.append("acceptance-rate count case failed")
    if sv_accept_rate([0.9, 0.8], 0.5) != 1.0 or sv_accept_rate([0.1], 0.5) != 0.0:
        failures.append("acceptance-rate edge cases failed")
    return _finish("metric oracles", failures, started,
                   f"{pairs} random string pairs + EER sweep oracle")


# --- auxiliary: masking properties ----------------------------------------------

def check_mask_properties(draws: int = 10000, seed: int = 0) -> CheckResult:
    started = time.time()
    failures = []
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(4, 50))
    if not np.array_equal(time_mask(x, 0.0, rng), x):
        failures.append("max_fraction=0 is not the identity")
    masked = time_mask(x, 0.4, np.random.default_rng(3))
    zero_cols = np.flatnonzero((masked == 0).all(axis=0))
    if zero_cols.size:
        if np.any(np.diff(zero_cols) != 1):
            failures.append("masked span is not contiguous")
        untouched = np.setdiff1d(np.arange(x.shape[1]), zero_cols)
        if not np.array_equal(masked[:, untouched], x[:, untouched]):
            failures.append("complement of the span was modified")

    frames = 50
    max_fraction = 0.1
    total = 0.0
    for _ in range(draws):
        m = time_mask(x, max_fraction, rng)
        total += (m == 0).all(axis=0).sum() / frames
    expected = (int(max_fraction * frames) / 2) / frames
    if abs(total / draws - expected) > 0.1 * expected:
        failures.append(f"mean masked fraction {total / draws:.4f} vs "
                        f"expected {expected:.4f}")
    return _finish("time-mask properties", failures, started,
                   f"{draws} Monte-Carlo draws")


def run_all() -> list[CheckResult]:
    return [
        check_kernel_invariants(),
        check_gradients(),
        check_loss_arithmetic(),
        check_shape_contracts(),
        check_metric_oracles(),
        check_mask_properties(),
    ]


def format_results(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = []
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        line = f"{status}  {r.name:<{width}}  {r.seconds:7.2f}s"
        if r.detail:
            line += f"  {r.detail}"
        lines.append(line)
    failed = sum(not r.passed for r in results)
    lines.append(f"{len(results) - failed}/{len(results)} checks passed")
    return "\n".join(lines)
