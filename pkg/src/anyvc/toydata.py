"""Synthetic toy corpora for desk-scale experiments and tests.

Each pseudo-speaker is a (base pitch, formant set) pair; utterances are
slowly-modulated harmonic vowel sequences.  The point is not realism but a
fully self-contained corpus whose pitch and timbre differ per speaker.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .features import SAMPLE_RATE, RawAudio, save_audio

_FORMANT_SETS = [
    (730.0, 1090.0, 2440.0),   # open vowel
    (270.0, 2290.0, 3010.0),   # close front
    (300.0, 870.0, 2240.0),    # close back
    (530.0, 1840.0, 2480.0),   # mid front
]


def speaker_profile(index: int) -> dict:
    base_f0 = 110.0 * (2.0 ** ((index % 7) / 7.0))  # spread over one octave
    formants = _FORMANT_SETS[index % len(_FORMANT_SETS)]
    return {"base_f0": base_f0, "formants": formants}


def synth_utterance(rng: np.random.Generator, base_f0: float, formants,
                    duration: float = 1.6) -> RawAudio:
    """One harmonic 'vowel' with vibrato, drifting pitch, and an amplitude arc."""
    n = int(duration * SAMPLE_RATE)
    t = np.arange(n) / SAMPLE_RATE
    drift = 1.0 + 0.05 * np.sin(2 * np.pi * rng.uniform(0.2, 0.6) * t + rng.uniform(0, 2 * np.pi))
    vibrato = 1.0 + 0.01 * np.sin(2 * np.pi * 5.5 * t)
    f0 = base_f0 * rng.uniform(0.95, 1.05) * drift * vibrato
    phase = 2 * np.pi * np.cumsum(f0) / SAMPLE_RATE

    wave = np.zeros(n)
    for k in range(1, 13):
        freq = k * base_f0
        # formant-shaped harmonic amplitudes
        gain = sum(np.exp(-0.5 * ((freq - f) / 120.0) ** 2) for f in formants)
        wave += (gain + 0.05 / k) * np.sin(k * phase)
    envelope = np.minimum(1.0, 10.0 * t) * np.minimum(1.0, 10.0 * (duration - t))
    envelope *= 1.0 + 0.2 * np.sin(2 * np.pi * rng.uniform(1.0, 3.0) * t)
    wave *= envelope
    wave *= 0.8 / np.abs(wave).max()
    return RawAudio(wave.astype(np.float32), SAMPLE_RATE)


def make_toy_corpus(root, n_speakers: int = 4, utterances: int = 5,
                    seed: int = 0, duration: float = 1.6) -> Path:
    """Write a speaker-per-directory WAV corpus under ``root``."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    for s in range(n_speakers):
        profile = speaker_profile(s)
        spk_dir = root / f"spk{s:02d}"
        spk_dir.mkdir(parents=True, exist_ok=True)
        for u in range(utterances):
            audio = synth_utterance(rng, profile["base_f0"], profile["formants"],
                                    duration)
            save_audio(spk_dir / f"utt{u:02d}.wav", audio)
    return root
