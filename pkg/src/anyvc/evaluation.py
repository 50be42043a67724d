"""Objective evaluation: transcript error rates and speaker-verification
acceptance.

WER counts Levenshtein operations over whitespace tokens, CER over the
character sequence with spaces removed; both divide by the reference length
and may exceed 1.  Verification uses cosine similarity between embeddings
with an acceptance threshold placed at the equal error rate of genuine vs
impostor trials.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .config import ConfigurationError
from .features import RawAudio, extract_mel

_NON_ALNUM = re.compile(r"[^A-Z0-9 ]+")
_SPACES = re.compile(r"\s+")


def normalize_transcript(text: str) -> str:
    """Uppercase, strip punctuation, collapse whitespace. Idempotent."""
    text = _NON_ALNUM.sub(" ", text.upper())
    return _SPACES.sub(" ", text).strip()


@dataclass
class Transcript:
    text: str

    def __post_init__(self):
        self.text = normalize_transcript(self.text)

    @property
    def words(self) -> list[str]:
        return self.text.split()

    @property
    def characters(self) -> str:
        return self.text.replace(" ", "")


def edit_distance(a, b) -> int:
    """Levenshtein distance with unit-cost insert/delete/substitute."""
    a, b = list(a), list(b)
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        current = [i]
        for j, y in enumerate(b, start=1):
            current.append(min(previous[j] + 1,
                               current[j - 1] + 1,
                               previous[j - 1] + (x != y)))
        previous = current
    return previous[-1]


def _as_transcript(value) -> Transcript:
    return value if isinstance(value, Transcript) else Transcript(str(value))


def wer(ref, hyp) -> float:
    ref, hyp = _as_transcript(ref), _as_transcript(hyp)
    if not ref.words:
        raise ValueError("reference transcript is empty")
    return edit_distance(ref.words, hyp.words) / len(ref.words)


def cer(ref, hyp) -> float:
    ref, hyp = _as_transcript(ref), _as_transcript(hyp)
    if not ref.characters:
        raise ValueError("reference transcript is empty")
    return edit_distance(ref.characters, hyp.characters) / len(ref.characters)


def cosine_similarity(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine similarity is undefined for zero vectors")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


@dataclass
class ScorePair:
    genuine: list[float]    # same-speaker trial similarities
    impostor: list[float]   # different-speaker trial similarities

    def __post_init__(self):
        if not self.genuine or not self.impostor:
            raise ValueError("both trial lists must be non-empty")


def eer_threshold(scores: ScorePair) -> tuple[float, float]:
    """Sweep the sorted union of scores for the threshold where the false
    acceptance and false rejection rates meet; ties break toward the lowest
    threshold.  Returns (threshold, eer)."""
    genuine = np.asarray(scores.genuine, dtype=np.float64)
    impostor = np.asarray(scores.impostor, dtype=np.float64)
    candidates = np.unique(np.concatenate([genuine, impostor]))
    best = None
    for theta in candidates:
        far = float((impostor >= theta).mean())
        frr = float((genuine < theta).mean())
        gap = abs(far - frr)
        if best is None or gap < best[0] - 1e-15:
            best = (gap, theta, (far + frr) / 2)
    _, theta, eer = best
    return float(theta), float(eer)


def sv_accept_rate(similarities, threshold: float) -> float:
    similarities = np.asarray(list(similarities), dtype=np.float64)
    if similarities.size == 0:
        raise ValueError("no similarities given")
    return float((similarities >= threshold).mean())


def build_trials(embeddings: dict[str, np.ndarray],
                 speaker_of: dict[str, str]) -> ScorePair:
    """All-pairs trials over the given utterances: same-speaker pairs become
    genuine trials, cross-speaker pairs impostor trials."""
    ids = sorted(embeddings)
    genuine, impostor = [], []
    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            sim = cosine_similarity(embeddings[a], embeddings[b])
            (genuine if speaker_of[a] == speaker_of[b] else impostor).append(sim)
    return ScorePair(genuine, impostor)


# --- adapters ----------------------------------------------------------------

def mel_stats_embedding(audio: RawAudio) -> np.ndarray:
    """Bundled trivial embedder: per-bin mean and std of the log mel map.

    Good enough to exercise the verification pipeline without downloads; real
    evaluations should register a proper verification model adapter.
    """
    mel = extract_mel(audio).data
    return np.concatenate([mel.mean(axis=1), mel.std(axis=1)]).astype(np.float64)


_EMBEDDERS = {"mel_stats": mel_stats_embedding}
_TRANSCRIBERS: dict[str, object] = {}


def register_embedder(name: str, fn):
    _EMBEDDERS[name] = fn


def register_transcriber(name: str, fn):
    _TRANSCRIBERS[name] = fn


def get_embedder(name: str = "mel_stats"):
    try:
        return _EMBEDDERS[name]
    except KeyError:
        raise ConfigurationError(
            f"embedder {name!r} is not registered; the bundled fallback is "
            f"'mel_stats'") from None


def get_transcriber(name: str):
    try:
        return _TRANSCRIBERS[name]
    except KeyError:
        raise ConfigurationError(
            f"transcriber {name!r} is not registered; register an ASR adapter "
            f"with register_transcriber() or omit WER/CER from the report"
        ) from None


# --- reports -----------------------------------------------------------------

@dataclass
class PairResult:
    source_id: str
    target_id: str
    scenario: str          # S2S | U2U
    similarity: float
    accepted: bool
    wer: float | None = None
    cer: float | None = None


REPORT_COLUMNS = ("source_id", "target_id", "scenario", "wer", "cer",
                  "similarity", "accepted")


def aggregate_results(rows: list[PairResult]) -> dict[str, dict[str, float]]:
    """Mean WER/CER and acceptance rate per scenario plus their average."""
    table: dict[str, dict[str, float]] = {}
    scenarios = [s for s in ("S2S", "U2U") if any(r.scenario == s for r in rows)]
    for metric, getter in (("WER", lambda r: r.wer), ("CER", lambda r: r.cer),
                           ("SV", lambda r: float(r.accepted))):
        per = {}
        for scenario in scenarios:
            values = [getter(r) for r in rows if r.scenario == scenario
                      and getter(r) is not None]
            if values:
                per[scenario] = float(np.mean(values))
        if per:
            per["Avg"] = float(np.mean(list(per.values())))
            table[metric] = per
    return table


def write_report(path, rows: list[PairResult], threshold: float, eer: float):
    def fmt(v):
        return "NA" if v is None else f"{v:.6f}"

    with open(path, "w") as fh:
        fh.write(f"# sv_threshold={threshold:.6f}\teer={eer:.6f}\n")
        fh.write("\t".join(REPORT_COLUMNS) + "\n")
        for r in rows:
            fh.write("\t".join([
                r.source_id, r.target_id, r.scenario, fmt(r.wer), fmt(r.cer),
                f"{r.similarity:.6f}", str(int(r.accepted)),
            ]) + "\n")


def format_report(rows: list[PairResult], threshold: float, eer: float) -> str:
    lines = [f"pairs: {len(rows)}   threshold: {threshold:.4f}   eer: {eer:.4f}",
             f"{'metric':<8}{'S2S':>10}{'U2U':>10}{'Avg':>10}"]
    table = aggregate_results(rows)
    for metric in ("WER", "CER", "SV"):
        per = table.get(metric)
        if per is None:
            lines.append(f"{metric:<8}{'NA':>10}{'NA':>10}{'NA':>10}")
            continue
        cells = "".join(f"{per.get(col, float('nan')):>10.4f}"
                        for col in ("S2S", "U2U", "Avg"))
        lines.append(f"{metric:<8}{cells}")
    return "\n".join(lines)
