"""Waveform synthesis from log mel maps.

The bundled vocoder inverts the mel filterbank with a non-negative
pseudo-inverse and reconstructs phase by Griffin-Lim iteration, so the
pipeline can produce audible output with no external models.  Neural
vocoders plug in through the adapter registry.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import istft, stft

from .config import ConfigurationError
from .features import (HOP_LENGTH, N_FFT, SAMPLE_RATE, WIN_LENGTH, RawAudio,
                       mel_filterbank)


def griffin_lim(log_mel: np.ndarray, n_iter: int = 32, seed: int = 0) -> RawAudio:
    """Reconstruct a waveform from an (80, T) log mel map."""
    log_mel = np.asarray(log_mel, dtype=np.float64)
    mel_power = np.exp(log_mel)
    fb = mel_filterbank()
    linear_power = np.maximum(np.linalg.pinv(fb) @ mel_power, 0.0)
    magnitude = np.sqrt(linear_power)

    rng = np.random.default_rng(seed)
    phase = np.exp(2j * np.pi * rng.random(magnitude.shape))
    spec = magnitude * phase
    kwargs = dict(fs=SAMPLE_RATE, window="hann", nperseg=WIN_LENGTH,
                  noverlap=WIN_LENGTH - HOP_LENGTH, nfft=N_FFT)
    for _ in range(n_iter):
        _, wave = istft(spec, **kwargs)
        _, _, rebuilt = stft(wave, **kwargs)
        angles = rebuilt / np.maximum(np.abs(rebuilt), 1e-12)
        t = min(angles.shape[1], magnitude.shape[1])
        spec = magnitude[:, :t] * angles[:, :t]
    _, wave = istft(spec, **kwargs)
    peak = np.abs(wave).max()
    if peak > 1.0:
        wave = wave / peak
    return RawAudio(wave.astype(np.float32), SAMPLE_RATE)


class GriffinLimVocoder:
    name = "griffin_lim"

    def __init__(self, n_iter: int = 32, seed: int = 0):
        self.n_iter = n_iter
        self.seed = seed

    def synthesize(self, log_mel: np.ndarray) -> RawAudio:
        return griffin_lim(log_mel, self.n_iter, self.seed)


_VOCODERS: dict[str, object] = {"griffin_lim": GriffinLimVocoder()}


def register_vocoder(vocoder, name: str | None = None):
    key = name or getattr(vocoder, "name", None)
    if not key:
        raise ValueError("vocoder needs a name")
    if not hasattr(vocoder, "synthesize"):
        raise ConfigurationError(f"vocoder {key!r} must expose .synthesize(log_mel)")
    _VOCODERS[key] = vocoder
    return vocoder


def get_vocoder(name: str):
    try:
        return _VOCODERS[name]
    except KeyError:
        raise ConfigurationError(
            f"vocoder {name!r} is not available; the bundled fallback is "
            f"'griffin_lim'") from None
