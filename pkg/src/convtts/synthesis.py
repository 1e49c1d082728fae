"""Conversation-driving synthesis.

A script is a conversation file in the corpus record format with audio
fields optional. Turns are processed in order: every turn's utterance
embedding (both speakers) joins the running chat history, and agent turns
are synthesized against the history as it stood when the turn began. Each
agent turn writes a mel cache entry, an alignment matrix, and optionally
a Griffin-Lim waveform.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .arrayio import save_array
from .checkpoint import build_model_from_checkpoint, load_checkpoint
from .context_encoder import ChatHistory, UtteranceEmbedding
from .corpus import (
    Conversation,
    PhonemeInventory,
    read_conversations,
    validate_conversation,
)
from .errors import CheckpointError, ConfigError, CorpusValidationError, InputError
from .features import (
    FileEmbeddingProvider,
    NormalizationConfig,
    StubEmbeddingProvider,
    build_char_feature_matrix,
)
from .mel import MelConfig, MelSpectrogram, save_mel, write_wav
from .model import UtteranceInputs
from .vocoder import griffin_lim


@dataclass
class SynthesisResult:
    conversation_id: str
    turn_index: int
    mel_path: Path
    alignment_path: Path
    wav_path: Optional[Path]
    stopped: bool
    n_frames: int

    def to_dict(self):
        return {
            "conversation_id": self.conversation_id,
            "turn_index": self.turn_index,
            "mel_path": str(self.mel_path),
            "alignment_path": str(self.alignment_path),
            "wav_path": str(self.wav_path) if self.wav_path else None,
            "stopped": self.stopped,
            "n_frames": self.n_frames,
        }


def load_script(path) -> list[Conversation]:
    """Read conversations from a script file or a directory of them."""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.jsonl"))
        if not files:
            raise InputError(f"no .jsonl script files in {path}")
        conversations = []
        for f in files:
            conversations.extend(read_conversations(f))
        return conversations
    return read_conversations(path)


def turn_generator(seed: int, conversation_id: str, text: str) -> torch.Generator:
    """Per-turn generator keyed on (seed, conversation, text).

    Keying on content rather than turn position keeps a turn's output
    independent of unrelated turns in the script.
    """
    digest = hashlib.blake2b(
        f"{seed}\x1f{conversation_id}\x1f{text}".encode("utf-8"), digest_size=8
    ).digest()
    gen = torch.Generator()
    gen.manual_seed(int.from_bytes(digest, "little") & 0x7FFFFFFFFFFFFFFF)
    return gen


def _resolve_provider(model, stub_embedder_flag, embeddings_dir, seed):
    if not (model.config.uses_aux or model.config.uses_context):
        return None
    dim = model.config.embedding_dim
    if stub_embedder_flag:
        return StubEmbeddingProvider(dim=dim, seed=seed)
    if embeddings_dir is not None:
        return FileEmbeddingProvider(embeddings_dir, dim=dim)
    raise ConfigError(
        f"variant {model.variant} needs an embedding provider: pass "
        "--stub-embedder or --embeddings <dir>"
    )


def run_conversation(
    script_path,
    checkpoint_path,
    out_dir,
    *,
    variant: Optional[str] = None,
    stub_embedder: bool = False,
    embeddings_dir=None,
    seed: int = 0,
    griffin_lim_iters: int = 60,
    max_frames: Optional[int] = None,
    write_wave: bool = True,
    agent_label: Optional[str] = None,
) -> list[SynthesisResult]:
    """Synthesize every agent turn of every conversation in the script."""
    checkpoint = load_checkpoint(checkpoint_path)
    if variant is not None and variant != checkpoint.variant:
        raise CheckpointError(
            f"checkpoint holds variant {checkpoint.variant}, requested {variant}"
        )
    if checkpoint.inventory is None:
        raise CheckpointError("checkpoint carries no phoneme inventory")
    inventory = PhonemeInventory.from_dict(checkpoint.inventory)
    model = build_model_from_checkpoint(checkpoint)
    norm = (
        NormalizationConfig.from_dict(checkpoint.normalization)
        if checkpoint.normalization
        else None
    )
    if model.config.uses_aux and norm is None:
        raise CheckpointError("checkpoint lacks the normalization config M2/M3 need")
    mel_config = (
        MelConfig.from_dict(checkpoint.audio_config)
        if checkpoint.audio_config
        else MelConfig()
    )
    if agent_label is None:
        agent_label = (
            checkpoint.speaker_labels[0] if checkpoint.speaker_labels else "agent"
        )
    provider = _resolve_provider(model, stub_embedder, embeddings_dir, seed)

    conversations = load_script(script_path)
    if not conversations or all(not c.turns for c in conversations):
        raise InputError(f"empty script: {script_path}")
    diagnostics = []
    for conv in conversations:
        diagnostics.extend(
            validate_conversation(conv, inventory, require_audio=False)
        )
    if diagnostics:
        raise CorpusValidationError(
            f"script failed validation, first: {diagnostics[0]}", diagnostics
        )

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results: list[SynthesisResult] = []
    needs_embeddings = provider is not None
    for conv in conversations:
        conv_dir = out_dir / conv.id
        past: list[UtteranceEmbedding] = []
        for turn in conv.turns:
            utt = turn.utterance
            current = None
            if needs_embeddings:
                if hasattr(provider, "bind_key"):
                    provider.bind_key(f"{conv.id}.t{turn.index:03d}")
                char_emb, utt_emb = provider.embed_utterance(utt.text)
                current = UtteranceEmbedding(
                    vector=utt_emb,
                    speaker_id=1 if turn.speaker == agent_label else 0,
                )
            if turn.speaker == agent_label:
                inputs = UtteranceInputs(
                    phoneme_ids=torch.as_tensor(inventory.encode(utt.phonemes)),
                )
                if model.config.uses_aux:
                    inputs.char_matrix = torch.as_tensor(
                        build_char_feature_matrix(utt, char_emb, norm, clamp=True),
                        dtype=torch.float32,
                    )
                    inputs.char_alignment = list(utt.char_alignment)
                if model.config.uses_context:
                    inputs.history = ChatHistory(entries=past + [current])
                rng = turn_generator(seed, conv.id, utt.text)
                mel_frames, alignments, stopped = model.synthesize(
                    inputs, rng=rng, max_frames=max_frames
                )
                mel = MelSpectrogram(
                    frames=mel_frames.numpy().astype(np.float32),
                    hop_ms=mel_config.hop_ms,
                    win_ms=mel_config.win_ms,
                    sample_rate=mel_config.sample_rate,
                )
                mel_path = conv_dir / f"t{turn.index:03d}.mel.f32"
                save_mel(mel_path, mel)
                align_path = conv_dir / f"t{turn.index:03d}.align.f32"
                save_array(align_path, alignments.numpy())
                wav_path = None
                if write_wave:
                    waveform = griffin_lim(
                        mel.frames, mel_config, iterations=griffin_lim_iters, seed=seed
                    )
                    peak = np.max(np.abs(waveform)) if waveform.size else 0.0
                    if peak > 1.0:
                        waveform = waveform / peak * 0.95
                    wav_path = conv_dir / f"t{turn.index:03d}.wav"
                    write_wav(wav_path, waveform, mel_config.sample_rate)
                results.append(
                    SynthesisResult(
                        conversation_id=conv.id,
                        turn_index=turn.index,
                        mel_path=mel_path,
                        alignment_path=align_path,
                        wav_path=wav_path,
                        stopped=stopped,
                        n_frames=mel.n_frames,
                    )
                )
            if current is not None:
                past.append(current)
    summary = {
        "results": [r.to_dict() for r in results],
        "warnings": [
            f"{r.conversation_id} turn {r.turn_index}: hit the frame cap before stopping"
            for r in results
            if not r.stopped
        ],
    }
    (out_dir / "results.json").write_text(json.dumps(summary, indent=1), encoding="utf-8")
    return results


__all__ = [
    "SynthesisResult",
    "load_script",
    "run_conversation",
    "turn_generator",
]
