"""Conversational corpus schema: records, validation, and splits.

A corpus is described by a JSON manifest pointing at conversation files,
a phoneme inventory, and a normalization config. Conversation files are
line-delimited JSON, one conversation per line:

    {"id": ..., "turns": [{"index": 0, "speaker": "agent", "text": ...,
      "sentence_spans": [[s, e], ...], "phonemes": [...],
      "char_alignment": [[s, e], ...],
      "annotations": [{"kind": ..., "span": [s, e]}], "audio": path|null}]}

All ``[s, e]`` pairs are half-open ranges. ``sentence_spans`` partition the
utterance text; ``char_alignment`` holds one range into the phoneme
sequence per text character (empty ranges for characters that own no
phonemes, e.g. punctuation). Relative paths in the manifest and in turn
``audio`` fields resolve against the manifest's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, CorpusLoadError, CorpusValidationError

ANNOTATION_KINDS = ("filler", "repeat", "false_start", "hesitation_pause")


@dataclass
class SpontaneousAnnotation:
    kind: str
    span: tuple[int, int]


@dataclass
class Utterance:
    text: str
    sentence_spans: list[tuple[int, int]]
    phonemes: list[str]
    char_alignment: list[tuple[int, int]]
    annotations: list[SpontaneousAnnotation] = field(default_factory=list)

    @property
    def n_chars(self) -> int:
        return len(self.text)


@dataclass
class Turn:
    index: int
    speaker: str
    utterance: Utterance
    audio_path: Optional[str] = None


@dataclass
class Conversation:
    id: str
    turns: list[Turn]


@dataclass
class Diagnostic:
    conversation_id: str
    turn_index: Optional[int]
    rule: str
    message: str

    def __str__(self):
        where = self.conversation_id
        if self.turn_index is not None:
            where += f"[turn {self.turn_index}]"
        return f"{where}: {self.rule}: {self.message}"


class PhonemeInventory:
    """Symbol inventory split into phonemes, punctuation, and boundaries.

    Symbol ids follow file order: phonemes first, then punctuation, then
    boundary symbols. Only phoneme-class positions must be owned by a
    character in ``char_alignment``.
    """

    def __init__(self, phonemes, punctuation=(), boundaries=()):
        self.phonemes = list(phonemes)
        self.punctuation = list(punctuation)
        self.boundaries = list(boundaries)
        self.symbols = self.phonemes + self.punctuation + self.boundaries
        if len(set(self.symbols)) != len(self.symbols):
            raise ConfigError("inventory contains duplicate symbols")
        if not self.symbols:
            raise ConfigError("inventory is empty")
        self._ids = {s: i for i, s in enumerate(self.symbols)}
        self._unowned_ok = set(self.punctuation) | set(self.boundaries)

    def __len__(self):
        return len(self.symbols)

    def __contains__(self, symbol):
        return symbol in self._ids

    def id_of(self, symbol) -> int:
        try:
            return self._ids[symbol]
        except KeyError:
            raise CorpusLoadError(f"symbol not in inventory: {symbol!r}") from None

    def encode(self, phonemes) -> np.ndarray:
        return np.array([self.id_of(p) for p in phonemes], dtype=np.int64)

    def may_be_unowned(self, symbol) -> bool:
        return symbol in self._unowned_ok

    def to_dict(self):
        return {
            "phonemes": self.phonemes,
            "punctuation": self.punctuation,
            "boundaries": self.boundaries,
        }

    @classmethod
    def from_dict(cls, obj):
        return cls(
            obj.get("phonemes", []),
            obj.get("punctuation", []),
            obj.get("boundaries", []),
        )


def load_inventory(path) -> PhonemeInventory:
    path = Path(path)
    if not path.exists():
        raise CorpusLoadError(f"inventory file not found: {path}")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorpusLoadError(f"unparsable inventory {path}: {exc}") from exc
    return PhonemeInventory.from_dict(obj)


@dataclass
class CorpusManifest:
    conversation_paths: list[Path]
    speaker_labels: tuple[str, str]  # (agent/trainable, customer)
    inventory_path: Path
    normalization_path: Path
    audio: dict
    root: Path

    @property
    def agent_label(self) -> str:
        return self.speaker_labels[0]


def load_manifest(path) -> CorpusManifest:
    path = Path(path)
    if not path.exists():
        raise CorpusLoadError(f"manifest not found: {path}")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorpusLoadError(f"unparsable manifest {path}: {exc}") from exc
    root = path.parent
    try:
        conv_paths = [root / p for p in obj["conversations"]]
        labels = tuple(obj["speaker_labels"])
        inventory_path = root / obj["inventory"]
        normalization_path = root / obj["normalization"]
    except (KeyError, TypeError) as exc:
        raise CorpusLoadError(f"manifest {path} missing field: {exc}") from exc
    if len(labels) != 2 or labels[0] == labels[1]:
        raise CorpusLoadError(
            f"manifest {path}: speaker_labels must be two distinct labels"
        )
    audio = dict(obj.get("audio", {}))
    for ref in (inventory_path, normalization_path):
        if not ref.exists():
            raise CorpusLoadError(f"manifest references missing file: {ref}")
    return CorpusManifest(
        conversation_paths=conv_paths,
        speaker_labels=labels,  # type: ignore[arg-type]
        inventory_path=inventory_path,
        normalization_path=normalization_path,
        audio=audio,
        root=root,
    )


def _parse_span_list(raw, what, conv_id):
    spans = []
    for item in raw:
        if not isinstance(item, (list, tuple)) or len(item) != 2:
            raise CorpusLoadError(f"{conv_id}: {what} entries must be [start, end]")
        spans.append((int(item[0]), int(item[1])))
    return spans


def parse_conversation_record(obj) -> Conversation:
    """Build a :class:`Conversation` from one decoded JSON record.

    Structural problems (missing fields, wrong container types) raise
    :class:`CorpusLoadError`; semantic problems are left to
    :func:`validate_conversation`.
    """
    try:
        conv_id = str(obj["id"])
        raw_turns = obj["turns"]
    except (KeyError, TypeError) as exc:
        raise CorpusLoadError(f"conversation record missing field: {exc}") from exc
    turns = []
    for raw in raw_turns:
        try:
            annotations = [
                SpontaneousAnnotation(
                    kind=str(a["kind"]),
                    span=(int(a["span"][0]), int(a["span"][1])),
                )
                for a in raw.get("annotations", [])
            ]
            utterance = Utterance(
                text=str(raw["text"]),
                sentence_spans=_parse_span_list(
                    raw["sentence_spans"], "sentence_spans", conv_id
                ),
                phonemes=[str(p) for p in raw["phonemes"]],
                char_alignment=_parse_span_list(
                    raw["char_alignment"], "char_alignment", conv_id
                ),
                annotations=annotations,
            )
            turns.append(
                Turn(
                    index=int(raw["index"]),
                    speaker=str(raw["speaker"]),
                    utterance=utterance,
                    audio_path=raw.get("audio"),
                )
            )
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise CorpusLoadError(f"{conv_id}: malformed turn record: {exc}") from exc
    return Conversation(id=conv_id, turns=turns)


def conversation_to_record(conv: Conversation) -> dict:
    return {
        "id": conv.id,
        "turns": [
            {
                "index": t.index,
                "speaker": t.speaker,
                "text": t.utterance.text,
                "sentence_spans": [list(s) for s in t.utterance.sentence_spans],
                "phonemes": list(t.utterance.phonemes),
                "char_alignment": [list(s) for s in t.utterance.char_alignment],
                "annotations": [
                    {"kind": a.kind, "span": list(a.span)}
                    for a in t.utterance.annotations
                ],
                "audio": t.audio_path,
            }
            for t in conv.turns
        ],
    }


def read_conversations(path) -> list[Conversation]:
    path = Path(path)
    if not path.exists():
        raise CorpusLoadError(f"conversation file not found: {path}")
    conversations = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusLoadError(f"{path}:{lineno}: unparsable record: {exc}") from exc
        conversations.append(parse_conversation_record(obj))
    return conversations


def write_conversations(path, conversations: Sequence[Conversation]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(conversation_to_record(c)) for c in conversations]
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def _validate_utterance(diag, conv_id, turn_index, utt, inventory):
    n_chars = len(utt.text)
    n_phonemes = len(utt.phonemes)

    spans = utt.sentence_spans
    ok = True
    cursor = 0
    for s, e in spans:
        if s != cursor or e <= s:
            ok = False
            break
        cursor = e
    if cursor != n_chars:
        ok = False
    if not ok:
        diag.append(
            Diagnostic(
                conv_id,
                turn_index,
                "sentence_spans_partition",
                f"sentence_spans {spans} do not partition [0, {n_chars})",
            )
        )

    for symbol in utt.phonemes:
        if inventory is not None and symbol not in inventory:
            diag.append(
                Diagnostic(
                    conv_id,
                    turn_index,
                    "unknown_symbol",
                    f"phoneme symbol not in inventory: {symbol!r}",
                )
            )

    align_ok = len(utt.char_alignment) == n_chars
    if align_ok:
        prev_end = 0
        for s, e in utt.char_alignment:
            if s < 0 or e < s or e > n_phonemes or s < prev_end:
                align_ok = False
                break
            if e > s:
                prev_end = e
    if not align_ok:
        diag.append(
            Diagnostic(
                conv_id,
                turn_index,
                "char_alignment",
                "char_alignment must hold one ordered, non-overlapping "
                f"[s, e) range per character within [0, {n_phonemes})",
            )
        )
    elif inventory is not None:
        owned = np.zeros(n_phonemes, dtype=bool)
        for s, e in utt.char_alignment:
            owned[s:e] = True
        for pos, symbol in enumerate(utt.phonemes):
            if symbol in inventory and not owned[pos] and not inventory.may_be_unowned(symbol):
                diag.append(
                    Diagnostic(
                        conv_id,
                        turn_index,
                        "char_alignment_coverage",
                        f"phoneme position {pos} ({symbol!r}) owned by no character",
                    )
                )

    for ann in utt.annotations:
        if ann.kind not in ANNOTATION_KINDS:
            diag.append(
                Diagnostic(
                    conv_id,
                    turn_index,
                    "annotation_kind",
                    f"unknown annotation kind {ann.kind!r}",
                )
            )
        s, e = ann.span
        if not (0 <= s < e <= n_chars):
            diag.append(
                Diagnostic(
                    conv_id,
                    turn_index,
                    "annotation_span",
                    f"annotation span {ann.span} outside [0, {n_chars})",
                )
            )
        elif not any(ss <= s and e <= se for ss, se in utt.sentence_spans):
            diag.append(
                Diagnostic(
                    conv_id,
                    turn_index,
                    "annotation_containment",
                    f"annotation span {ann.span} crosses a sentence boundary",
                )
            )


def validate_conversation(
    conv: Conversation,
    inventory: Optional[PhonemeInventory] = None,
    speaker_labels: Optional[tuple[str, str]] = None,
    require_audio: bool = True,
) -> list[Diagnostic]:
    """Check every schema invariant; returns diagnostics instead of raising.

    ``speaker_labels`` is ``(agent, customer)``; when given, speakers must
    match one of the two and, with ``require_audio``, agent turns must carry
    an audio reference. Scripts are validated with ``require_audio=False``.
    """
    diag: list[Diagnostic] = []
    if not conv.turns:
        diag.append(Diagnostic(conv.id, None, "turns_nonempty", "conversation has no turns"))
        return diag
    for pos, turn in enumerate(conv.turns):
        if turn.index != pos:
            diag.append(
                Diagnostic(
                    conv.id,
                    turn.index,
                    "turn_index_contiguous",
                    f"turn at position {pos} has index {turn.index}",
                )
            )
        if speaker_labels is not None:
            if turn.speaker not in speaker_labels:
                diag.append(
                    Diagnostic(
                        conv.id,
                        turn.index,
                        "speaker_label",
                        f"speaker {turn.speaker!r} not in {list(speaker_labels)}",
                    )
                )
            elif require_audio and turn.speaker == speaker_labels[0] and not turn.audio_path:
                diag.append(
                    Diagnostic(
                        conv.id,
                        turn.index,
                        "audio_required",
                        "agent turn lacks an audio reference",
                    )
                )
        _validate_utterance(diag, conv.id, turn.index, turn.utterance, inventory)
    return diag


def load_corpus(manifest_path, require_audio: bool = True) -> list[Conversation]:
    """Load and validate every conversation referenced by the manifest.

    Conversations come back in manifest order (then line order). Any
    diagnostic fails the load with :class:`CorpusValidationError`.
    """
    manifest = load_manifest(manifest_path)
    inventory = load_inventory(manifest.inventory_path)
    conversations: list[Conversation] = []
    for conv_path in manifest.conversation_paths:
        conversations.extend(read_conversations(conv_path))
    diagnostics: list[Diagnostic] = []
    for conv in conversations:
        diagnostics.extend(
            validate_conversation(
                conv,
                inventory,
                speaker_labels=manifest.speaker_labels,
                require_audio=require_audio,
            )
        )
    if diagnostics:
        first = diagnostics[0]
        raise CorpusValidationError(
            f"corpus failed validation ({len(diagnostics)} diagnostics), first: {first}",
            diagnostics,
        )
    seen = set()
    for conv in conversations:
        if conv.id in seen:
            raise CorpusValidationError(
                f"duplicate conversation id {conv.id!r}",
                [Diagnostic(conv.id, None, "duplicate_id", "conversation id reused")],
            )
        seen.add(conv.id)
    return conversations


def split_corpus(source, val_fraction: float, seed: int):
    """Deterministic conversation-level train/validation split.

    ``source`` may be a manifest path, :class:`Conversation` objects, or
    bare ids. Returns ``(train_ids, val_ids)``, disjoint and jointly
    exhaustive; conversations are never split across the boundary.
    """
    if not (0 <= val_fraction < 1):
        raise ConfigError(f"val_fraction must be in [0, 1), got {val_fraction}")
    if isinstance(source, (str, Path)):
        source = load_corpus(source)
    ids = [c.id if isinstance(c, Conversation) else str(c) for c in source]
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    n_val = int(len(ids) * val_fraction)
    val_ids = sorted(ids[i] for i in order[:n_val])
    train_ids = sorted(ids[i] for i in order[n_val:])
    return train_ids, val_ids
