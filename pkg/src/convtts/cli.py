"""Command-line interface.

Subcommands: ``validate-corpus``, ``extract-mel``, ``train``, ``synth``.
Exit codes: 0 success, 1 corpus/script validation failure, 2 runtime
errors (missing files, bad configs, checkpoint mismatches).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .corpus import (
    load_corpus,
    load_inventory,
    load_manifest,
    read_conversations,
    validate_conversation,
)
from .errors import ConfigError, ConvTTSError, CorpusValidationError
from .features import (
    FileEmbeddingProvider,
    StubEmbeddingProvider,
    load_normalization,
)
from .mel import MelConfig, extract_mel, mel_cache_name, read_wav, save_mel
from .model import default_model_config, desk_model_config
from .synthesis import run_conversation
from .training import TrainConfig, prepare_examples, train

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def _cmd_validate_corpus(args) -> int:
    manifest = load_manifest(args.manifest)
    inventory = load_inventory(manifest.inventory_path)
    load_normalization(manifest.normalization_path)
    diagnostics = []
    n_conversations = 0
    for conv_path in manifest.conversation_paths:
        for conv in read_conversations(conv_path):
            n_conversations += 1
            diagnostics.extend(
                validate_conversation(
                    conv, inventory, speaker_labels=manifest.speaker_labels
                )
            )
    if diagnostics:
        for d in diagnostics:
            print(d, file=sys.stderr)
        print(f"FAIL: {len(diagnostics)} diagnostics in {n_conversations} conversations")
        return EXIT_VALIDATION
    print(f"OK: {n_conversations} conversations, no diagnostics")
    return EXIT_OK


def _cmd_extract_mel(args) -> int:
    manifest = load_manifest(args.manifest)
    conversations = load_corpus(args.manifest)
    mel_config = MelConfig.from_dict(manifest.audio)
    out = Path(args.out)
    count = 0
    for conv in conversations:
        for turn in conv.turns:
            if turn.speaker != manifest.agent_label or not turn.audio_path:
                continue
            waveform, _ = read_wav(manifest.root / turn.audio_path, mel_config.sample_rate)
            mel = extract_mel(waveform, mel_config)
            save_mel(out / mel_cache_name(conv.id, turn.index), mel)
            count += 1
    print(f"wrote {count} mel caches to {out}")
    return EXIT_OK


def _build_provider(spec: dict, embedding_dim: int):
    kind = spec.get("kind", "stub")
    if kind == "stub":
        return StubEmbeddingProvider(dim=embedding_dim, seed=int(spec.get("seed", 0)))
    if kind == "files":
        return FileEmbeddingProvider(spec["dir"], dim=embedding_dim)
    raise ConfigError(f"unknown embedder kind {kind!r}")


def _cmd_train(args) -> int:
    config_path = Path(args.config)
    if not config_path.exists():
        raise ConfigError(f"train config not found: {config_path}")
    cfg = json.loads(config_path.read_text(encoding="utf-8"))
    manifest_path = config_path.parent / cfg["manifest"]
    manifest = load_manifest(manifest_path)
    inventory = load_inventory(manifest.inventory_path)
    norm = load_normalization(manifest.normalization_path)
    conversations = load_corpus(manifest_path)
    variant = cfg.get("variant", "M1")
    embedding_dim = int(cfg.get("embedding_dim", 32))
    scale = cfg.get("scale", "desk")
    if scale == "desk":
        model_config = desk_model_config(len(inventory), variant, embedding_dim)
    elif scale == "full":
        model_config = default_model_config(len(inventory), variant, embedding_dim)
    else:
        raise ConfigError(f"scale must be 'desk' or 'full', got {scale!r}")
    mel_config = MelConfig.from_dict(manifest.audio)
    provider = None
    if variant in ("M2", "M3"):
        provider = _build_provider(cfg.get("embedder", {"kind": "stub"}), embedding_dim)
    examples = prepare_examples(
        conversations, manifest, inventory, norm, provider, mel_config, variant
    )
    train_cfg = TrainConfig(model_variant=variant, **cfg.get("train", {}))
    out_dir = config_path.parent / cfg.get("out_dir", "runs")
    out_dir.mkdir(parents=True, exist_ok=True)
    result = train(
        train_cfg,
        model_config,
        examples,
        out_dir=out_dir,
        inventory=inventory,
        norm=norm,
        speaker_labels=manifest.speaker_labels,
        audio_config=manifest.audio or MelConfig().__dict__,
        init_checkpoint=args.init,
        log_path=out_dir / "train_log.jsonl",
    )
    last = result.losses[-1] if result.losses else {}
    print(
        f"trained {train_cfg.steps} steps on {len(examples)} utterances; "
        f"final total loss {last.get('total', float('nan')):.4f}; "
        f"checkpoint: {result.checkpoint_path}"
    )
    return EXIT_OK


def _cmd_synth(args) -> int:
    results = run_conversation(
        args.script,
        args.checkpoint,
        args.out,
        variant=args.variant,
        stub_embedder=args.stub_embedder,
        embeddings_dir=args.embeddings,
        seed=args.seed,
        griffin_lim_iters=args.griffin_lim_iters,
        max_frames=args.max_frames,
        write_wave=not args.no_wav,
        agent_label=args.agent_label,
    )
    for r in results:
        note = "" if r.stopped else "  [warning: frame cap hit]"
        print(
            f"{r.conversation_id} turn {r.turn_index}: {r.n_frames} frames "
            f"-> {r.mel_path}{note}"
        )
    print(f"synthesized {len(results)} agent turns into {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convtts", description="conversational TTS tooling"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate-corpus", help="check a corpus manifest and its records")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=_cmd_validate_corpus)

    p = sub.add_parser("extract-mel", help="write mel caches for all agent turns")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_extract_mel)

    p = sub.add_parser("train", help="train a model from a JSON run config")
    p.add_argument("--config", required=True)
    p.add_argument("--init", default=None, help="checkpoint to initialize from")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("synth", help="synthesize every agent turn of a script")
    p.add_argument("--script", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", choices=["M1", "M2", "M3"], default=None)
    p.add_argument("--stub-embedder", action="store_true")
    p.add_argument("--embeddings", default=None, help="directory of precomputed embeddings")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--griffin-lim-iters", type=int, default=60)
    p.add_argument("--max-frames", type=int, default=2000)
    p.add_argument("--no-wav", action="store_true")
    p.add_argument("--agent-label", default=None)
    p.set_defaults(func=_cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CorpusValidationError as exc:
        for d in exc.diagnostics:
            print(d, file=sys.stderr)
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ConvTTSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
