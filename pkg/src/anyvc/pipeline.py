"""End-to-end orchestration shared by the CLI and the test suite: prepare,
train, convert, evaluate.

Model space vs feature space: cached features are raw; the trainer and
converter normalize mel maps (and mel-frontend content) with train-split
statistics, and conversion denormalizes the prediction before vocoding.
The statistics travel inside both the feature cache and the checkpoint.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np
import torch

from .config import (ConfigurationError, ModelConfig, PrepareConfig, TrainConfig)
from .data import (DatasetManifest, FeatureCache, denormalize_mel, generate_pairs,
                   normalize_mel, prepare_dataset)
from .evaluation import (PairResult, Transcript, build_trials, cer,
                         cosine_similarity, eer_threshold, get_embedder, wer,
                         write_report)
from .features import (UtteranceFeatures, extract_features, get_frontend,
                       load_audio, save_audio)
from .model import VoiceConverter, build_model, load_checkpoint
from .training import Trainer, TrainingUtterance, seed_all
from .vocoder import get_vocoder


def run_prepare(corpus_dir, out_dir, cfg: PrepareConfig | None = None,
                frontend: str = "mel"):
    return prepare_dataset(corpus_dir, out_dir, cfg or PrepareConfig(), frontend)


def _identity_stats(mel_bins: int):
    return np.zeros(mel_bins, dtype=np.float32), np.ones(mel_bins, dtype=np.float32)


def _stats_from_checkpoint(ckpt) -> tuple[np.ndarray, np.ndarray]:
    if ckpt.feature_stats is None:
        return _identity_stats(ckpt.config.mel_bins)
    return (ckpt.feature_stats["mel_mean"].numpy(),
            ckpt.feature_stats["mel_std"].numpy())


def build_training_set(cache: FeatureCache,
                       manifest: DatasetManifest | None = None,
                       split: str = "train") -> list[TrainingUtterance]:
    """Normalized model-space utterances for the trainer."""
    if manifest is not None:
        ids = [r.utterance_id for r in manifest.by_split(split)]
    else:
        ids = cache.ids
    if not ids:
        raise ValueError(f"no utterances in split {split!r}")
    stats = cache.mel_stats or _identity_stats(cache.get(ids[0]).features.mel.data.shape[0])
    out = []
    for utt_id in ids:
        feats = cache.get(utt_id).features
        content = feats.content.data
        if cache.frontend == "mel":
            content = normalize_mel(content, stats)
        out.append(TrainingUtterance(
            utt_id, content.astype(np.float32),
            feats.pitch.log_f0.astype(np.float32),
            normalize_mel(feats.mel.data, stats).astype(np.float32)))
    return out


def run_train(prepared_dir, checkpoint_path, model_cfg: ModelConfig | None = None,
              train_cfg: TrainConfig | None = None, steps: int | None = None,
              log_path=None) -> Trainer:
    prepared_dir = Path(prepared_dir)
    manifest = DatasetManifest.load(prepared_dir / "manifest.tsv")
    cache = FeatureCache(prepared_dir / "cache")
    train_cfg = train_cfg or TrainConfig.desk()

    frontend_channels = get_frontend(cache.frontend).channels
    if model_cfg is None:
        model_cfg = ModelConfig.desk(content_channels=frontend_channels)
    if model_cfg.content_channels != frontend_channels:
        raise ConfigurationError(
            f"model.content_channels={model_cfg.content_channels} does not match "
            f"the cached {cache.frontend!r} frontend width {frontend_channels}")

    dataset = build_training_set(cache, manifest)
    stats = cache.mel_stats
    feature_stats = None if stats is None else {
        "mel_mean": torch.from_numpy(stats[0].copy()),
        "mel_std": torch.from_numpy(stats[1].copy()),
    }

    seed_all(train_cfg.seed)
    model = build_model(model_cfg, seed=train_cfg.seed)
    trainer = Trainer(model, train_cfg, dataset, log_path=log_path)
    if steps is None:
        steps = train_cfg.steps
    if steps is None:
        per_epoch = -(-len(dataset) // train_cfg.batch_size)
        steps = train_cfg.epochs * per_epoch
    trainer.fit(steps, checkpoint_path=checkpoint_path,
                metadata={"frontend": cache.frontend}, feature_stats=feature_stats)
    trainer.close()
    return trainer


def convert_features(model: VoiceConverter, source: UtteranceFeatures,
                     targets: list[UtteranceFeatures], mel_stats,
                     frontend: str) -> np.ndarray:
    """Run one conversion; returns the denormalized (mel_bins, T_source) map."""
    def content_of(feats: UtteranceFeatures) -> torch.Tensor:
        data = feats.content.data
        if frontend == "mel":
            data = normalize_mel(data, mel_stats)
        return torch.from_numpy(np.ascontiguousarray(data)).float()

    model.eval()
    with torch.no_grad():
        mel = model(content_of(source),
                    torch.from_numpy(source.pitch.log_f0).float(),
                    [content_of(t) for t in targets])
    return denormalize_mel(mel.numpy(), mel_stats)


@dataclasses.dataclass
class ConversionJob:
    source_path: str
    target_paths: list[str]
    checkpoint_path: str
    output_path: str
    mel_output_path: str | None = None
    vocoder: str = "griffin_lim"

    def __post_init__(self):
        if len(self.target_paths) < 1:
            raise ValueError("need at least one target utterance")


def run_convert(job: ConversionJob, frontend: str | None = None) -> np.ndarray:
    """Convert one source utterance toward k target utterances; writes the WAV
    (and optionally the mel array) and returns the mel."""
    ckpt = load_checkpoint(job.checkpoint_path)
    ckpt_frontend = ckpt.metadata.get("frontend", "mel")
    if frontend is not None and frontend != ckpt_frontend:
        raise ConfigurationError(
            f"checkpoint was trained with the {ckpt_frontend!r} frontend but the "
            f"job requests {frontend!r}; re-run with --frontend {ckpt_frontend} "
            f"or train a matching checkpoint")
    if get_frontend(ckpt_frontend).channels != ckpt.config.content_channels:
        raise ConfigurationError(
            f"frontend {ckpt_frontend!r} produces "
            f"{get_frontend(ckpt_frontend).channels} channels but the checkpoint "
            f"expects {ckpt.config.content_channels}")

    stats = _stats_from_checkpoint(ckpt)
    source = extract_features(load_audio(job.source_path), ckpt_frontend)
    targets = [extract_features(load_audio(p), ckpt_frontend)
               for p in job.target_paths]
    mel = convert_features(ckpt.model, source, targets, stats, ckpt_frontend)
    wave = get_vocoder(job.vocoder).synthesize(mel)
    save_audio(job.output_path, wave)
    if job.mel_output_path:
        np.save(job.mel_output_path, mel)
    return mel


def run_evaluate(prepared_dir, checkpoint_path, scenarios=("S2S",),
                 n_pairs: int = 20, k_targets: int = 1, seed: int = 0,
                 report_path=None, embedder: str = "mel_stats",
                 transcriber=None, vocoder: str = "griffin_lim"):
    """Convert seeded pairs and score them; returns (rows, threshold, eer).

    The acceptance threshold comes from the equal error rate of all-pairs
    trials over the real test-split utterances.
    """
    prepared_dir = Path(prepared_dir)
    manifest = DatasetManifest.load(prepared_dir / "manifest.tsv")
    cache = FeatureCache(prepared_dir / "cache")
    ckpt = load_checkpoint(checkpoint_path)
    stats = _stats_from_checkpoint(ckpt)
    embed = get_embedder(embedder)
    synth = get_vocoder(vocoder)

    test_records = manifest.by_split("test")
    audio_by_id = {r.utterance_id: load_audio(r.audio_path) for r in test_records}
    embeddings = {i: embed(a) for i, a in audio_by_id.items()}
    speaker_of = {r.utterance_id: r.speaker_id for r in test_records}
    threshold, eer = eer_threshold(build_trials(embeddings, speaker_of))

    rows = []
    for scenario in scenarios:
        for pair in generate_pairs(manifest, scenario, n_pairs, seed, k_targets):
            source = cache.get(pair.source.utterance_id).features
            targets = [cache.get(t.utterance_id).features for t in pair.targets]
            mel = convert_features(ckpt.model, source, targets, stats, cache.frontend)
            converted = synth.synthesize(mel)
            similarity = cosine_similarity(
                embed(converted), embeddings[pair.targets[0].utterance_id])
            row = PairResult(pair.source.utterance_id,
                             pair.targets[0].utterance_id,
                             scenario.upper(), similarity,
                             similarity >= threshold)
            if transcriber is not None:
                reference = Transcript(transcriber(audio_by_id[pair.source.utterance_id]))
                hypothesis = Transcript(transcriber(converted))
                row.wer = wer(reference, hypothesis)
                row.cer = cer(reference, hypothesis)
            rows.append(row)
    if report_path:
        write_report(report_path, rows, threshold, eer)
    return rows, threshold, eer
