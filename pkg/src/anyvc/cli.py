"""Command-line entry points: prepare, train, convert, evaluate, check."""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import __version__
from .checks import format_results, run_all
from .config import (ConfigurationError, ModelConfig, PrepareConfig, TrainConfig,
                     load_config)
from .evaluation import format_report, get_embedder, register_transcriber
from .features import get_frontend, load_adapter, register_frontend
from .pipeline import (ConversionJob, run_convert, run_evaluate, run_prepare,
                       run_train)
from .vocoder import register_vocoder


def _add_config_flag(p):
    p.add_argument("--config", help="YAML config file (sections: model, train, prepare)")
    p.add_argument("--seed", type=int, help="override the section seed")


def _load_sections(args):
    if args.config:
        return load_config(args.config)
    return {"model": None, "train": None, "prepare": None}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anyvc",
        description="Desk-scale any-to-any one-shot voice conversion")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="split a corpus and cache features")
    p.add_argument("corpus", help="directory of speaker subdirectories with WAVs")
    p.add_argument("out", help="output directory (manifest.tsv + cache/)")
    p.add_argument("--frontend", default="mel",
                   help="content frontend name (default: mel)")
    p.add_argument("--frontend-adapter", metavar="MODULE:ATTR",
                   help="import and register a content frontend adapter")
    _add_config_flag(p)

    p = sub.add_parser("train", help="train on a prepared directory")
    p.add_argument("prepared", help="output directory of `prepare`")
    p.add_argument("--checkpoint", required=True, help="checkpoint output path")
    p.add_argument("--steps", type=int, help="override the step count")
    p.add_argument("--log", help="TSV training-log path")
    _add_config_flag(p)

    p = sub.add_parser("convert", help="one-shot or multi-utterance conversion")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--source", required=True, help="source WAV (content)")
    p.add_argument("--target", required=True, nargs="+",
                   help="k >= 1 target WAVs (speaker identity)")
    p.add_argument("--out", required=True, help="output WAV path")
    p.add_argument("--mel-out", help="optional .npy path for the output mel")
    p.add_argument("--frontend", help="must match the checkpoint frontend")
    p.add_argument("--frontend-adapter", metavar="MODULE:ATTR")
    p.add_argument("--vocoder", default="griffin_lim")
    p.add_argument("--vocoder-adapter", metavar="MODULE:ATTR")

    p = sub.add_parser("evaluate", help="convert seeded pairs and score them")
    p.add_argument("prepared", help="output directory of `prepare`")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scenario", choices=["s2s", "u2u", "both"], default="s2s")
    p.add_argument("--pairs", type=int, default=20)
    p.add_argument("--targets", type=int, default=1, metavar="K")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="report TSV path")
    p.add_argument("--embedder", default="mel_stats")
    p.add_argument("--embed-adapter", metavar="MODULE:ATTR")
    p.add_argument("--asr-adapter", metavar="MODULE:ATTR")
    p.add_argument("--vocoder", default="griffin_lim")
    p.add_argument("--vocoder-adapter", metavar="MODULE:ATTR")

    sub.add_parser("check", help="run the invariant/gradient/oracle suite")
    return parser


def _register_adapters(args):
    if getattr(args, "frontend_adapter", None):
        register_frontend(load_adapter(args.frontend_adapter))
    if getattr(args, "vocoder_adapter", None):
        register_vocoder(load_adapter(args.vocoder_adapter))
    if getattr(args, "embed_adapter", None):
        adapter = load_adapter(args.embed_adapter)
        from .evaluation import register_embedder
        register_embedder(getattr(adapter, "name", args.embedder), adapter)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except (ConfigurationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    if args.command == "check":
        results = run_all()
        print(format_results(results))
        return 0 if all(r.passed for r in results) else 1

    _register_adapters(args)

    if args.command == "prepare":
        sections = _load_sections(args)
        prepare_cfg = sections["prepare"] or PrepareConfig()
        if args.seed is not None:
            prepare_cfg = dataclasses.replace(prepare_cfg, seed=args.seed)
        get_frontend(args.frontend)
        manifest, cache = run_prepare(args.corpus, args.out, prepare_cfg,
                                      args.frontend)
        print(f"prepared {len(manifest.records)} utterances from "
              f"{len(manifest.seen_speakers)} seen + "
              f"{len(manifest.unseen_speakers)} unseen speakers -> {args.out}")
        return 0

    if args.command == "train":
        sections = _load_sections(args)
        train_cfg = sections["train"] or TrainConfig.desk()
        if args.seed is not None:
            train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
        trainer = run_train(args.prepared, args.checkpoint,
                            model_cfg=sections["model"], train_cfg=train_cfg,
                            steps=args.steps, log_path=args.log)
        last = trainer.history[-1]
        print(f"trained {trainer.step_count} steps; final total loss "
              f"{last.total:.4f} -> {args.checkpoint}")
        return 0

    if args.command == "convert":
        job = ConversionJob(args.source, list(args.target), args.checkpoint,
                            args.out, args.mel_out, args.vocoder)
        mel = run_convert(job, frontend=args.frontend)
        print(f"wrote {args.out} ({mel.shape[1]} frames)")
        return 0

    if args.command == "evaluate":
        if args.asr_adapter:
            register_transcriber("adapter", load_adapter(args.asr_adapter))
            transcriber = load_adapter(args.asr_adapter)
        else:
            transcriber = None
        get_embedder(args.embedder)
        scenarios = {"s2s": ("S2S",), "u2u": ("U2U",),
                     "both": ("S2S", "U2U")}[args.scenario]
        rows, threshold, eer = run_evaluate(
            args.prepared, args.checkpoint, scenarios=scenarios,
            n_pairs=args.pairs, k_targets=args.targets, seed=args.seed,
            report_path=args.out, embedder=args.embedder, transcriber=transcriber,
            vocoder=args.vocoder)
        print(format_report(rows, threshold, eer))
        return 0

    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
