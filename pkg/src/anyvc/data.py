"""Dataset manifests, train/valid/test splitting, conversion-pair generation,
and the on-disk feature cache.

Cache layout: one ``<utterance_id>.npz`` per utterance (arrays ``content``,
``mel``, ``log_f0``, ``voiced``) next to a ``cache_manifest.json`` recording
the format version, the content frontend, per-utterance shapes, and the
train-split mel statistics used for normalization.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import PrepareConfig
from .features import (FRAME_RATE, UtteranceFeatures, FeatureSequence,
                       MelSpectrogram, PitchTrack, extract_features, get_frontend,
                       load_audio)

CACHE_VERSION = 1
MANIFEST_COLUMNS = ("utterance_id", "speaker_id", "audio_path", "split", "seen",
                    "duration_s")


@dataclass
class UtteranceInfo:
    utterance_id: str
    speaker_id: str
    audio_path: str
    split: str          # train | valid | test
    seen: bool          # speaker participates in training
    duration_s: float


@dataclass
class DatasetManifest:
    records: list[UtteranceInfo] = field(default_factory=list)

    def __post_init__(self):
        ids = [r.utterance_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate utterance ids in manifest")
        for r in self.records:
            if r.split not in ("train", "valid", "test"):
                raise ValueError(f"bad split {r.split!r} for {r.utterance_id}")
            if not r.seen and r.split != "test":
                raise ValueError("unseen-speaker utterances must live in the test split")

    @property
    def seen_speakers(self) -> list[str]:
        return sorted({r.speaker_id for r in self.records if r.seen})

    @property
    def unseen_speakers(self) -> list[str]:
        return sorted({r.speaker_id for r in self.records if not r.seen})

    def by_split(self, split: str) -> list[UtteranceInfo]:
        return [r for r in self.records if r.split == split]

    def save(self, path):
        with open(path, "w") as fh:
            fh.write("\t".join(MANIFEST_COLUMNS) + "\n")
            for r in self.records:
                fh.write("\t".join([
                    r.utterance_id, r.speaker_id, r.audio_path, r.split,
                    str(int(r.seen)), f"{r.duration_s:.4f}",
                ]) + "\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        records = []
        with open(path) as fh:
            header = fh.readline().rstrip("\n").split("\t")
            if tuple(header) != MANIFEST_COLUMNS:
                raise ValueError(f"unexpected manifest header in {path}")
            for line in fh:
                utt, spk, audio, split, seen, dur = line.rstrip("\n").split("\t")
                records.append(UtteranceInfo(utt, spk, audio, split,
                                             bool(int(seen)), float(dur)))
        return cls(records)


def scan_corpus(corpus_dir) -> dict[str, list[Path]]:
    """Speaker-labeled corpus layout: one directory per speaker, WAVs inside."""
    root = Path(corpus_dir)
    if not root.is_dir():
        raise ValueError(f"corpus directory {corpus_dir} does not exist")
    corpus = {}
    for spk_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        wavs = sorted(spk_dir.glob("*.wav"))
        if wavs:
            corpus[spk_dir.name] = wavs
    if not corpus:
        raise ValueError(f"no speaker directories with WAV files under {corpus_dir}")
    return corpus


def split_dataset(corpus: dict[str, list[Path]], cfg: PrepareConfig) -> DatasetManifest:
    """Seeded split: a held-out unseen-speaker pool for U2U, then 60/20/20
    utterance splits within each remaining (seen) speaker."""
    rng = np.random.default_rng(cfg.seed)
    speakers = sorted(corpus)
    if len(speakers) < 2:
        raise ValueError("need at least two speakers")
    n_unseen = int(round(cfg.unseen_speaker_fraction * len(speakers)))
    n_unseen = min(n_unseen, len(speakers) - 2)  # keep >= 2 seen speakers
    order = rng.permutation(len(speakers))
    unseen = {speakers[i] for i in order[:n_unseen]}

    records = []
    for spk in speakers:
        paths = corpus[spk]
        if spk in unseen:
            for p in paths:
                records.append(UtteranceInfo(f"{spk}__{p.stem}", spk, str(p),
                                             "test", False, 0.0))
            continue
        perm = rng.permutation(len(paths))
        n = len(paths)
        n_train = int(round(cfg.train_fraction * n))
        n_valid = int(round(cfg.valid_fraction * n))
        for rank, idx in enumerate(perm):
            split = ("train" if rank < n_train
                     else "valid" if rank < n_train + n_valid else "test")
            p = paths[idx]
            records.append(UtteranceInfo(f"{spk}__{p.stem}", spk, str(p),
                                         split, True, 0.0))
    records.sort(key=lambda r: r.utterance_id)
    return DatasetManifest(records)


@dataclass
class ConversionPair:
    source: UtteranceInfo
    targets: list[UtteranceInfo]  # k utterances of one target speaker
    scenario: str


def generate_pairs(manifest: DatasetManifest, scenario: str, n_pairs: int,
                   seed: int, k_targets: int = 1) -> list[ConversionPair]:
    """Seeded conversion pairs with source speaker != target speaker.

    S2S draws from seen speakers' test utterances, U2U from the held-out
    unseen speakers.  Multi-utterance jobs take k utterances of the target
    speaker.
    """
    scenario = scenario.upper()
    if scenario not in ("S2S", "U2U"):
        raise ValueError("scenario must be 'S2S' or 'U2U'")
    if k_targets < 1:
        raise ValueError("k_targets must be >= 1")
    pool = [r for r in manifest.by_split("test") if r.seen == (scenario == "S2S")]
    by_speaker: dict[str, list[UtteranceInfo]] = {}
    for r in pool:
        by_speaker.setdefault(r.speaker_id, []).append(r)
    if len(by_speaker) < 2:
        raise ValueError(
            f"{scenario} needs at least two speakers with test utterances")
    speakers = sorted(by_speaker)
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n_pairs):
        src_spk, tgt_spk = rng.choice(len(speakers), size=2, replace=False)
        src_utts = by_speaker[speakers[src_spk]]
        tgt_utts = by_speaker[speakers[tgt_spk]]
        source = src_utts[rng.integers(len(src_utts))]
        take = min(k_targets, len(tgt_utts))
        picks = rng.choice(len(tgt_utts), size=take, replace=False)
        targets = [tgt_utts[i] for i in picks]
        while len(targets) < k_targets:  # small pools: reuse with replacement
            targets.append(tgt_utts[rng.integers(len(tgt_utts))])
        pairs.append(ConversionPair(source, targets, scenario))
    return pairs


# --- feature cache -----------------------------------------------------------

@dataclass
class CachedUtterance:
    utterance_id: str
    speaker_id: str
    features: UtteranceFeatures


class FeatureCache:
    """Read-side view of a prepared feature cache directory."""

    def __init__(self, cache_dir):
        self.cache_dir = Path(cache_dir)
        manifest_path = self.cache_dir / "cache_manifest.json"
        if not manifest_path.exists():
            raise ValueError(f"no cache manifest under {cache_dir}")
        with open(manifest_path) as fh:
            self.manifest = json.load(fh)
        if self.manifest.get("version") != CACHE_VERSION:
            raise ValueError(f"unsupported cache version {self.manifest.get('version')}")
        self.frontend = self.manifest["frontend"]
        stats = self.manifest.get("mel_stats")
        self.mel_stats = None
        if stats is not None:
            self.mel_stats = (np.asarray(stats["mean"], dtype=np.float32),
                              np.asarray(stats["std"], dtype=np.float32))

    @property
    def ids(self) -> list[str]:
        return sorted(self.manifest["records"])

    def speaker_of(self, utterance_id: str) -> str:
        return self.manifest["records"][utterance_id]["speaker_id"]

    def get(self, utterance_id: str) -> CachedUtterance:
        path = self.cache_dir / f"{utterance_id}.npz"
        with np.load(path) as arrays:
            features = UtteranceFeatures(
                FeatureSequence(arrays["content"], FRAME_RATE),
                MelSpectrogram(arrays["mel"]),
                PitchTrack(arrays["log_f0"], arrays["voiced"]),
            )
        return CachedUtterance(utterance_id, self.speaker_of(utterance_id), features)


def write_feature_cache(cache_dir, entries: dict[str, UtteranceFeatures],
                        speakers: dict[str, str], frontend: str,
                        mel_stats: tuple[np.ndarray, np.ndarray] | None = None):
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    records = {}
    for utt_id in sorted(entries):
        feats = entries[utt_id]
        np.savez(cache_dir / f"{utt_id}.npz",
                 content=feats.content.data, mel=feats.mel.data,
                 log_f0=feats.pitch.log_f0, voiced=feats.pitch.voiced)
        records[utt_id] = {
            "speaker_id": speakers[utt_id],
            "frames": int(feats.frames),
            "content_channels": int(feats.content.channels),
        }
    manifest = {
        "version": CACHE_VERSION,
        "frontend": frontend,
        "frame_rate": FRAME_RATE,
        "records": records,
        "mel_stats": None if mel_stats is None else {
            "mean": [float(v) for v in mel_stats[0]],
            "std": [float(v) for v in mel_stats[1]],
        },
    }
    with open(cache_dir / "cache_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def compute_mel_stats(mels) -> tuple[np.ndarray, np.ndarray]:
    """Per-bin mean/std over the frames of all given (80, T) mel maps."""
    stacked = np.concatenate([np.asarray(m) for m in mels], axis=1)
    mean = stacked.mean(axis=1)
    std = stacked.std(axis=1)
    return mean.astype(np.float32), np.maximum(std, 1e-4).astype(np.float32)


def normalize_mel(mel: np.ndarray, stats) -> np.ndarray:
    mean, std = stats
    return (mel - mean[:, None]) / std[:, None]


def denormalize_mel(mel: np.ndarray, stats) -> np.ndarray:
    mean, std = stats
    return mel * std[:, None] + mean[:, None]


def prepare_dataset(corpus_dir, out_dir, cfg: PrepareConfig,
                    frontend: str = "mel") -> tuple[DatasetManifest, FeatureCache]:
    """Scan, split, extract and cache features, and write the manifest.

    Deterministic for a fixed corpus and seed.  Mel normalization statistics
    are computed over the train split only.
    """
    get_frontend(frontend)  # fail early on a bad frontend
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus = scan_corpus(corpus_dir)
    manifest = split_dataset(corpus, cfg)

    entries, speakers = {}, {}
    for record in manifest.records:
        audio = load_audio(record.audio_path)
        record.duration_s = audio.duration
        entries[record.utterance_id] = extract_features(audio, frontend)
        speakers[record.utterance_id] = record.speaker_id

    train_ids = [r.utterance_id for r in manifest.by_split("train")]
    stats_pool = train_ids or sorted(entries)  # corpora with no seen split
    mel_stats = compute_mel_stats([entries[i].mel.data for i in stats_pool])

    write_feature_cache(out_dir / "cache", entries, speakers, frontend, mel_stats)
    manifest.save(out_dir / "manifest.tsv")
    return manifest, FeatureCache(out_dir / "cache")
