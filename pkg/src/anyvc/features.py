"""Audio-to-feature pipeline: WAV loading, log mel-spectrograms, pitch
tracking, content frontends, and frame alignment.

All feature streams run at 100 Hz (25 ms analysis window, 10 ms hop on
16 kHz audio) so that content features, pitch and mel targets can be
truncated to one common frame count.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from .config import ConfigurationError

SAMPLE_RATE = 16000
WIN_LENGTH = 400   # 25 ms
HOP_LENGTH = 160   # 10 ms
N_FFT = 512
N_MELS = 80
FRAME_RATE = 100
LOG_FLOOR = 1e-10
FMIN = 0.0
FMAX = 8000.0

F0_MIN = 60.0
F0_MAX = 400.0
F0_WINDOW = 1024
VOICING_THRESHOLD = 0.5
ENERGY_THRESHOLD = 1e-4


@dataclass
class RawAudio:
    """Mono 16 kHz audio with samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("audio must be a non-empty 1-D sample array")
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(f"sample rate must be {SAMPLE_RATE}, got {self.sample_rate}")
        if not np.isfinite(self.samples).all():
            raise ValueError("audio contains non-finite samples")
        if np.abs(self.samples).max() > 1.0 + 1e-6:
            raise ValueError("audio exceeds unit amplitude; load_audio normalizes peaks")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class FeatureSequence:
    """A (channels x frames) feature map at the common 100 Hz frame rate."""

    data: np.ndarray
    frame_rate: int = FRAME_RATE

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 2 or self.data.shape[1] < 1:
            raise ValueError("feature map must be 2-D with at least one frame")
        if not np.isfinite(self.data).all():
            raise ValueError("feature map contains non-finite entries")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def frames(self) -> int:
        return self.data.shape[1]


@dataclass
class PitchTrack:
    """Per-frame log-f0 with voicing flags; unvoiced frames carry exactly 0."""

    log_f0: np.ndarray
    voiced: np.ndarray

    def __post_init__(self):
        self.log_f0 = np.asarray(self.log_f0, dtype=np.float32)
        self.voiced = np.asarray(self.voiced, dtype=bool)
        if self.log_f0.shape != self.voiced.shape or self.log_f0.ndim != 1:
            raise ValueError("log_f0 and voiced must be equal-length 1-D arrays")
        if not np.isfinite(self.log_f0).all():
            raise ValueError("log_f0 contains non-finite entries")
        if np.any(self.log_f0[~self.voiced] != 0.0):
            raise ValueError("unvoiced frames must carry exactly 0")

    @property
    def frames(self) -> int:
        return self.log_f0.size


@dataclass
class MelSpectrogram:
    """(80 x frames) log-amplitude mel map."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 2 or self.data.shape[0] != N_MELS:
            raise ValueError(f"mel map must have {N_MELS} rows")
        if not np.isfinite(self.data).all():
            raise ValueError("mel map contains non-finite entries")

    @property
    def frames(self) -> int:
        return self.data.shape[1]


def load_audio(path) -> RawAudio:
    """Read a PCM or float WAV, downmix to mono, resample to 16 kHz and
    scale down if the peak exceeds unit amplitude."""
    try:
        rate, data = wavfile.read(path)
    except Exception as exc:
        raise OSError(f"could not read WAV file {path}: {exc}") from exc
    if data.size == 0:
        raise ValueError(f"{path} contains no audio")
    if data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.integer):
        x = data.astype(np.float64) / float(np.iinfo(data.dtype).max + 1)
    else:
        x = data.astype(np.float64)
    if x.ndim == 2:
        x = x.mean(axis=1)
    if rate != SAMPLE_RATE:
        g = math.gcd(SAMPLE_RATE, rate)
        x = resample_poly(x, SAMPLE_RATE // g, rate // g)
    peak = np.abs(x).max()
    if peak > 1.0:
        x = x / peak
    return RawAudio(x.astype(np.float32), SAMPLE_RATE)


def save_audio(path, audio: RawAudio):
    """Write 16-bit PCM WAV."""
    clipped = np.clip(audio.samples, -1.0, 1.0)
    wavfile.write(path, audio.sample_rate, (clipped * 32767.0).astype(np.int16))


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT,
                   sample_rate: int = SAMPLE_RATE,
                   fmin: float = FMIN, fmax: float = FMAX) -> np.ndarray:
    """Triangular mel filterbank (HTK mel scale), shape (n_mels, n_fft//2+1)."""
    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)

    points_hz = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    bin_freqs = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    fb = np.zeros((n_mels, bin_freqs.size))
    for m in range(n_mels):
        lo, center, hi = points_hz[m], points_hz[m + 1], points_hz[m + 2]
        up = (bin_freqs - lo) / max(center - lo, 1e-12)
        down = (hi - bin_freqs) / max(hi - center, 1e-12)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


def _frame_count(n_samples: int) -> int:
    return n_samples // HOP_LENGTH + 1


def _frame_signal(x: np.ndarray, frame_length: int, hop: int,
                  pad_mode: str = "reflect") -> np.ndarray:
    """Centered framing: frame i covers i*hop - frame_length//2 onward."""
    n_frames = _frame_count(x.size)
    half = frame_length // 2
    padded = np.pad(x, (half, half + frame_length), mode=pad_mode)
    idx = np.arange(frame_length)[None, :] + hop * np.arange(n_frames)[:, None]
    return padded[idx]


def extract_mel(audio: RawAudio) -> MelSpectrogram:
    """Log mel-spectrogram: 400-sample Hann window, 160-sample hop, centered
    framing (frames = samples//160 + 1), natural log with a 1e-10 power floor."""
    x = audio.samples.astype(np.float64)
    if x.size < WIN_LENGTH:
        raise ValueError(
            f"audio has {x.size} samples, below one {WIN_LENGTH}-sample window")
    frames = _frame_signal(x, WIN_LENGTH, HOP_LENGTH)
    window = np.hanning(WIN_LENGTH)
    spectrum = np.fft.rfft(frames * window, n=N_FFT, axis=1)
    power = np.abs(spectrum) ** 2
    mel_power = power @ mel_filterbank().T
    log_mel = np.log(np.maximum(mel_power, LOG_FLOOR))
    return MelSpectrogram(log_mel.T.astype(np.float32))


def track_f0(audio: RawAudio) -> tuple[np.ndarray, np.ndarray]:
    """Raw per-frame f0 in Hz plus voicing flags, frame-synchronous with the
    mel hop.

    Per frame, the normalized autocorrelation is searched over lags in the
    [F0_MIN, F0_MAX] band; to avoid octave errors the smallest lag within 15%
    of the best peak wins, refined by parabolic interpolation.  Frames with a
    weak peak or near-silent energy are unvoiced.
    """
    x = audio.samples.astype(np.float64)
    frames = _frame_signal(x, F0_WINDOW, HOP_LENGTH, pad_mode="constant")
    frames = frames - frames.mean(axis=1, keepdims=True)
    n_fft = 2 * F0_WINDOW
    spectrum = np.fft.rfft(frames, n=n_fft, axis=1)
    autocorr = np.fft.irfft(np.abs(spectrum) ** 2, n=n_fft, axis=1)

    lag_min = int(np.floor(SAMPLE_RATE / F0_MAX))
    lag_max = int(np.ceil(SAMPLE_RATE / F0_MIN))
    energy = autocorr[:, 0]
    rms = np.sqrt(np.maximum(energy, 0.0) / F0_WINDOW)

    f0 = np.zeros(frames.shape[0])
    voiced = np.zeros(frames.shape[0], dtype=bool)
    for i in range(frames.shape[0]):
        if rms[i] < ENERGY_THRESHOLD:
            continue
        r = autocorr[i, : lag_max + 2] / energy[i]
        band = r[lag_min : lag_max + 1]
        best = band.max()
        if best < VOICING_THRESHOLD:
            continue
        lag = lag_min + int(np.argmax(band >= 0.85 * best))
        # parabolic refinement around the local peak
        while lag + 1 < r.size - 1 and r[lag + 1] > r[lag]:
            lag += 1
        while lag - 1 > 0 and r[lag - 1] > r[lag]:
            lag -= 1
        denom = r[lag - 1] - 2.0 * r[lag] + r[lag + 1]
        shift = 0.0 if abs(denom) < 1e-12 else 0.5 * (r[lag - 1] - r[lag + 1]) / denom
        shift = float(np.clip(shift, -0.5, 0.5))
        f0[i] = SAMPLE_RATE / (lag + shift)
        voiced[i] = True
    return f0, voiced


def normalize_pitch(f0_hz: np.ndarray, voiced: np.ndarray) -> np.ndarray:
    """log f0 on voiced frames, z-scored over voiced frames; unvoiced stay 0."""
    log_f0 = np.zeros_like(f0_hz, dtype=np.float64)
    if voiced.any():
        values = np.log(f0_hz[voiced])
        if voiced.sum() >= 2:
            std = values.std()
            values = (values - values.mean()) / (std if std > 1e-12 else 1.0)
        log_f0[voiced] = values
    return log_f0


def extract_f0(audio: RawAudio) -> PitchTrack:
    f0, voiced = track_f0(audio)
    if not voiced.any():
        warnings.warn("utterance is fully unvoiced; pitch track is all zero")
    return PitchTrack(normalize_pitch(f0, voiced).astype(np.float32), voiced)


# --- content frontends -------------------------------------------------------

class MelFrontend:
    """Fallback content frontend: the 80-bin log mel re-declared as content."""

    name = "mel"
    channels = N_MELS

    def extract(self, audio: RawAudio) -> FeatureSequence:
        return FeatureSequence(extract_mel(audio).data)


_FRONTENDS: dict[str, object] = {"mel": MelFrontend()}


def register_frontend(frontend, name: str | None = None):
    """Register a content frontend adapter (needs .channels and .extract)."""
    key = name or getattr(frontend, "name", None)
    if not key:
        raise ValueError("frontend needs a name")
    if not hasattr(frontend, "extract") or not hasattr(frontend, "channels"):
        raise ConfigurationError(
            f"frontend {key!r} must expose .channels and .extract(audio)")
    _FRONTENDS[key] = frontend
    return frontend


def get_frontend(name: str):
    try:
        return _FRONTENDS[name]
    except KeyError:
        raise ConfigurationError(
            f"content frontend {name!r} is not available; register an adapter "
            f"with register_frontend() or fall back to the bundled 'mel' frontend"
        ) from None


def available_frontends() -> list[str]:
    return sorted(_FRONTENDS)


def load_adapter(spec: str):
    """Import an adapter given 'package.module:attribute'."""
    module_name, _, attr = spec.partition(":")
    if not module_name or not attr:
        raise ConfigurationError(f"adapter spec {spec!r} must look like 'module:attr'")
    import importlib

    try:
        module = importlib.import_module(module_name)
        obj = getattr(module, attr)
    except (ImportError, AttributeError) as exc:
        raise ConfigurationError(f"could not load adapter {spec!r}: {exc}") from exc
    return obj() if isinstance(obj, type) else obj


def extract_content_features(audio: RawAudio, frontend: str = "mel") -> FeatureSequence:
    return get_frontend(frontend).extract(audio)


def align_lengths(streams):
    """Truncate every stream to the shortest frame count.

    Streams are numpy arrays with time as the last axis (1-D or 2-D).
    """
    arrays = [np.asarray(s) for s in streams]
    if not arrays:
        return []
    lengths = [a.shape[-1] for a in arrays]
    if min(lengths) == 0:
        raise ValueError("cannot align an empty stream")
    t = min(lengths)
    return [a[..., :t] for a in arrays]


@dataclass
class UtteranceFeatures:
    """The three aligned model inputs extracted from one utterance."""

    content: FeatureSequence
    mel: MelSpectrogram
    pitch: PitchTrack

    def __post_init__(self):
        if not (self.content.frames == self.mel.frames == self.pitch.frames):
            raise ValueError("content, mel and pitch streams are not aligned")

    @property
    def frames(self) -> int:
        return self.mel.frames


def extract_features(audio: RawAudio, frontend: str = "mel") -> UtteranceFeatures:
    """Extract the full aligned feature set for one utterance."""
    content = extract_content_features(audio, frontend)
    mel = extract_mel(audio)
    pitch = extract_f0(audio)
    content_d, mel_d, log_f0, voiced = align_lengths(
        [content.data, mel.data, pitch.log_f0, pitch.voiced])
    return UtteranceFeatures(
        FeatureSequence(content_d, content.frame_rate),
        MelSpectrogram(mel_d),
        PitchTrack(log_f0, voiced),
    )
