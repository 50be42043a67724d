"""Losses, time masking, and the self-reconstruction training loop.

Each training sample uses one utterance as both content source and speaker
target.  The model runs twice per step: once on the clean content input and
once on a time-masked copy (the speaker path is never masked); the combined
objective is the mean of the two reconstruction terms plus a consistency
term between the two predictions.
"""

from __future__ import annotations

import random
import time
from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor

from .blocks import AttentiveStatsNorm
from .config import TrainConfig
from .model import VoiceConverter, save_checkpoint


def seed_all(seed: int):
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)


@dataclass
class LossBundle:
    recon: float
    siam_recon: float
    consistency: float
    total: float


def l1_loss(y: Tensor, y_hat: Tensor) -> Tensor:
    """Sum of absolute differences divided by the frame count (not by M*T).

    For batched inputs the per-sample losses are averaged.
    """
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(y.shape)} vs {tuple(y_hat.shape)}")
    frames = y.shape[-1]
    per_sample = (y - y_hat).abs().sum(dim=(-2, -1)) / frames
    return per_sample.mean()


def combined_loss(y: Tensor, y_hat: Tensor, y_siam: Tensor) -> tuple[Tensor, LossBundle]:
    """(recon + siamese recon)/2 + consistency between the two predictions."""
    recon = l1_loss(y, y_hat)
    siam = l1_loss(y, y_siam)
    consistency = l1_loss(y_hat, y_siam)
    total = (recon + siam) / 2 + consistency
    bundle = LossBundle(recon.item(), siam.item(), consistency.item(), total.item())
    return total, bundle


def time_mask(x: np.ndarray, max_fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Zero one contiguous span of frames across all channels.

    The span length is uniform on {0, ..., floor(max_fraction * T)} and the
    start uniform over valid positions; outside the span the copy is
    bitwise-identical to the input.
    """
    if not 0.0 <= max_fraction < 1.0:
        raise ValueError("max_fraction must lie in [0, 1)")
    masked = np.array(x, copy=True)
    frames = x.shape[-1]
    max_len = int(max_fraction * frames)
    if max_len == 0:
        return masked
    length = int(rng.integers(0, max_len + 1))
    if length > 0:
        start = int(rng.integers(0, frames - length + 1))
        masked[..., start:start + length] = 0.0
    return masked


@dataclass
class TrainingUtterance:
    """Feature arrays of one utterance, already in normalized model space."""

    utterance_id: str
    content: np.ndarray  # (H, T)
    pitch: np.ndarray    # (T,)
    mel: np.ndarray      # (M, T)


def _crop(utt: TrainingUtterance, frames: int, rng: np.random.Generator):
    content, pitch, mel = utt.content, utt.pitch, utt.mel
    t = content.shape[-1]
    if t < frames:  # tile short utterances up to the crop length
        reps = -(-frames // t)
        content = np.tile(content, (1, reps))
        pitch = np.tile(pitch, reps)
        mel = np.tile(mel, (1, reps))
        t = content.shape[-1]
    start = int(rng.integers(0, t - frames + 1))
    sl = slice(start, start + frames)
    return content[:, sl], pitch[sl], mel[:, sl]


class Trainer:
    """Owns the weights and optimizer; one instance per training run.

    Writes one machine-parsable TSV line per step when given a log path:
    step, the four loss fields, gradient norm, variance-clamp fraction, and
    wall time.
    """

    LOG_HEADER = ("step\trecon\tsiam_recon\tconsistency\ttotal"
                  "\tgrad_norm\tvar_clamp_fraction\twall_s")

    def __init__(self, model: VoiceConverter, cfg: TrainConfig,
                 dataset: list[TrainingUtterance], log_path=None):
        if not dataset:
            raise ValueError("training set is empty")
        self.model = model
        self.cfg = cfg
        self.dataset = dataset
        self.rng = np.random.default_rng(cfg.seed)
        self.optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate,
                                          betas=(cfg.beta1, cfg.beta2))
        self.history: list[LossBundle] = []
        self.step_count = 0
        self._log_fh = open(log_path, "w") if log_path else None
        if self._log_fh:
            self._log_fh.write(self.LOG_HEADER + "\n")

    def close(self):
        if self._log_fh:
            self._log_fh.close()
            self._log_fh = None

    def _make_batch(self):
        n = len(self.dataset)
        size = self.cfg.batch_size
        idx = self.rng.choice(n, size=size, replace=n < size)
        clean, masked, pitch, mel = [], [], [], []
        for i in idx:
            c, p, m = _crop(self.dataset[int(i)], self.cfg.crop_frames, self.rng)
            clean.append(c)
            masked.append(time_mask(c, self.cfg.mask_max_fraction, self.rng))
            pitch.append(p)
            mel.append(m)
        to = lambda arrs: torch.from_numpy(np.stack(arrs)).float()
        return to(clean), to(masked), to(pitch), to(mel)

    def _clamp_fraction(self) -> float:
        fractions = [m.last_clamp_fraction for m in self.model.modules()
                     if isinstance(m, AttentiveStatsNorm)]
        return max(fractions) if fractions else 0.0

    def train_step(self) -> LossBundle:
        started = time.perf_counter()
        clean, masked, pitch, mel = self._make_batch()
        self.model.train()
        y_hat = self.model(clean, pitch, clean)
        y_siam = self.model(masked, pitch, clean)
        total, bundle = combined_loss(mel, y_hat, y_siam)
        if not np.isfinite(bundle.total):
            raise RuntimeError(
                f"non-finite loss at step {self.step_count}: {bundle}")
        self.optimizer.zero_grad()
        total.backward()
        grad_norm = torch.sqrt(sum(
            (p.grad ** 2).sum() for p in self.model.parameters()
            if p.grad is not None))
        self.optimizer.step()
        self.step_count += 1
        self.history.append(bundle)
        if self._log_fh:
            self._log_fh.write(
                f"{self.step_count}\t{bundle.recon:.6f}\t{bundle.siam_recon:.6f}"
                f"\t{bundle.consistency:.6f}\t{bundle.total:.6f}"
                f"\t{float(grad_norm):.6f}\t{self._clamp_fraction():.6f}"
                f"\t{time.perf_counter() - started:.4f}\n")
            self._log_fh.flush()
        return bundle

    def fit(self, steps: int, checkpoint_path=None, metadata=None,
            feature_stats=None) -> list[LossBundle]:
        for _ in range(steps):
            self.train_step()
            if (checkpoint_path and self.cfg.checkpoint_interval > 0
                    and self.step_count % self.cfg.checkpoint_interval == 0):
                save_checkpoint(checkpoint_path, self.model, self.optimizer,
                                self.step_count, metadata, feature_stats)
        if checkpoint_path:
            save_checkpoint(checkpoint_path, self.model, self.optimizer,
                            self.step_count, metadata, feature_stats)
        return self.history[-steps:] if steps else []


def moving_average(values, window: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if window < 1 or values.size < window:
        raise ValueError("window must fit inside the series")
    kernel = np.ones(window) / window
    return np.convolve(values, kernel, mode="valid")
