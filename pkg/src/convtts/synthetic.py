"""Synthetic demo corpus generator.

Builds a tiny two-speaker conversational corpus in the package's corpus
format: a manifest, an inventory, a normalization config, conversation
records with sentence spans / phoneme alignments / spontaneous-behavior
annotations, and deterministic wav files for the agent turns. Utterance
audio is a per-phoneme tone sequence, so mel targets are learnable by a
small model in a few hundred steps.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .corpus import (
    Conversation,
    PhonemeInventory,
    SpontaneousAnnotation,
    Turn,
    Utterance,
    write_conversations,
)
from .features import normalization_from_utterances
from .mel import MelConfig, write_wav

# one CV syllable per character; text chars are the syllable initials
_SYLLABLES = {
    "k": ("k", "a"),
    "s": ("s", "e"),
    "t": ("t", "i"),
    "n": ("n", "o"),
    "m": ("m", "u"),
    "l": ("l", "a"),
    "w": ("w", "e"),
    "h": ("h", "o"),
}

AGENT = "agent"
CUSTOMER = "customer"


def demo_inventory() -> PhonemeInventory:
    phonemes = sorted({p for pair in _SYLLABLES.values() for p in pair})
    return PhonemeInventory(phonemes, punctuation=["."], boundaries=["-"])


def _build_utterance(sentences: list[str], annotations=()) -> Utterance:
    """Compose an utterance from per-sentence character strings.

    Text is the characters with a '.' after each sentence; phonemes are
    the syllables separated by '-' boundaries inside a sentence and '.'
    at sentence ends. Punctuation characters own no phonemes.
    """
    text_parts: list[str] = []
    spans: list[tuple[int, int]] = []
    phonemes: list[str] = []
    alignment: list[tuple[int, int]] = []
    cursor = 0
    for sent in sentences:
        start = cursor
        for i, ch in enumerate(sent):
            if i > 0:
                phonemes.append("-")
            begin = len(phonemes)
            phonemes.extend(_SYLLABLES[ch])
            alignment.append((begin, len(phonemes)))
            text_parts.append(ch)
            cursor += 1
        phonemes.append(".")
        alignment.append((len(phonemes), len(phonemes)))  # '.' owns nothing
        text_parts.append(".")
        cursor += 1
        spans.append((start, cursor))
    return Utterance(
        text="".join(text_parts),
        sentence_spans=spans,
        phonemes=phonemes,
        char_alignment=alignment,
        annotations=list(annotations),
    )


def render_waveform(
    utterance: Utterance,
    inventory: PhonemeInventory,
    mel_config: MelConfig,
    frames_per_phoneme: int = 3,
) -> np.ndarray:
    """Deterministic tone sequence keyed on phoneme identity."""
    sr = mel_config.sample_rate
    hop = mel_config.hop_samples
    seg = frames_per_phoneme * hop
    pieces = []
    for symbol in utterance.phonemes:
        sym_id = inventory.id_of(symbol)
        t = np.arange(seg) / sr
        if inventory.may_be_unowned(symbol):
            tone = np.zeros(seg)  # boundaries and punctuation are silent
        else:
            freq = 220.0 * (1.0 + 0.35 * sym_id)
            tone = 0.35 * np.sin(2 * np.pi * freq * t)
            tone += 0.15 * np.sin(2 * np.pi * 2.1 * freq * t)
            fade = min(hop // 2, seg // 4)
            envelope = np.ones(seg)
            envelope[:fade] = np.linspace(0, 1, fade)
            envelope[-fade:] = np.linspace(1, 0, fade)
            tone *= envelope
        pieces.append(tone)
    return np.concatenate(pieces)


def demo_conversations() -> list[Conversation]:
    """Three conversations with exactly eight agent (trainable) turns."""

    def agent(idx, sentences, annotations=()):
        return Turn(idx, AGENT, _build_utterance(sentences, annotations), audio_path=None)

    def customer(idx, sentences):
        return Turn(idx, CUSTOMER, _build_utterance(sentences), audio_path=None)

    conversations = [
        Conversation(
            "conv_a",
            [
                customer(0, ["ks"]),
                agent(1, ["kst"]),
                customer(2, ["tn"]),
                agent(3, ["mk", "tsn"], [SpontaneousAnnotation("filler", (0, 1))]),
                agent(4, ["wh"]),
            ],
        ),
        Conversation(
            "conv_b",
            [
                customer(0, ["nm"]),
                agent(1, ["ln", "mm"], [SpontaneousAnnotation("repeat", (3, 5))]),
                customer(2, ["sw"]),
                agent(3, ["tkl"]),
                agent(4, ["hs", "kn"], [SpontaneousAnnotation("hesitation_pause", (0, 2))]),
            ],
        ),
        Conversation(
            "conv_c",
            [
                customer(0, ["wt"]),
                agent(1, ["snt"], [SpontaneousAnnotation("false_start", (0, 2))]),
                customer(2, ["hm"]),
                agent(3, ["mwl", "kt"]),
            ],
        ),
    ]
    return conversations


def make_synthetic_corpus(out_dir, seed: int = 0, sample_rate: int = 16000) -> Path:
    """Write the demo corpus; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    inventory = demo_inventory()
    mel_config = MelConfig(sample_rate=sample_rate)
    conversations = demo_conversations()
    rng = np.random.default_rng(seed)
    for conv in conversations:
        for turn in conv.turns:
            if turn.speaker != AGENT:
                continue
            waveform = render_waveform(turn.utterance, inventory, mel_config)
            waveform = waveform + 0.002 * rng.standard_normal(waveform.shape)
            rel = f"audio/{conv.id}_t{turn.index:03d}.wav"
            write_wav(out_dir / rel, waveform, sample_rate)
            turn.audio_path = rel
    write_conversations(out_dir / "conversations.jsonl", conversations)
    (out_dir / "inventory.json").write_text(
        json.dumps(inventory.to_dict()), encoding="utf-8"
    )
    norm = normalization_from_utterances(
        [t.utterance for c in conversations for t in c.turns]
    )
    (out_dir / "norm.json").write_text(json.dumps(norm.to_dict()), encoding="utf-8")
    manifest = {
        "conversations": ["conversations.jsonl"],
        "speaker_labels": [AGENT, CUSTOMER],
        "inventory": "inventory.json",
        "normalization": "norm.json",
        "audio": {"sample_rate": sample_rate, "hop_ms": 12.5, "win_ms": 50.0},
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=1), encoding="utf-8")
    return manifest_path


def make_script(out_dir, with_audio_fields: bool = False) -> Path:
    """Write the demo conversations as a synthesis script (no audio)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    conversations = demo_conversations()
    if not with_audio_fields:
        for conv in conversations:
            for turn in conv.turns:
                turn.audio_path = None
    script_path = out_dir / "script.jsonl"
    write_conversations(script_path, conversations)
    return script_path


def main(argv=None):
    import argparse

    parser = argparse.ArgumentParser(description="generate the synthetic demo corpus")
    parser.add_argument("out_dir")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    manifest = make_synthetic_corpus(args.out_dir, seed=args.seed)
    print(manifest)


if __name__ == "__main__":
    main()
