"""Per-character statistical features, phoneme-rate upsampling, embeddings.

The six statistical features per character are count and relative-position
ratios over the sentence/utterance structure:

    f1  sentence character count      / max_chars_per_sentence
    f2  1-based char position in sentence / sentence character count
    f3  utterance character count     / max_chars_per_utterance
    f4  1-based char position in utterance / utterance character count
    f5  sentence count in utterance   / max_sentences_per_utterance
    f6  1-based sentence position     / sentence count

Relative positions are 1-based over their unit, so the final character of
a sentence has f2 = 1 and the final character of the utterance has f4 = 1.
These features depend only on the sentence-span structure, never on the
character values themselves.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .arrayio import load_array, save_array
from .corpus import Utterance
from .errors import AlignmentError, ConfigError, CorpusLoadError, NormalizationError

N_STAT_FEATURES = 6
BERT_DIM = 768


@dataclass
class NormalizationConfig:
    max_chars_per_sentence: int
    max_chars_per_utterance: int
    max_sentences_per_utterance: int

    def __post_init__(self):
        for name in (
            "max_chars_per_sentence",
            "max_chars_per_utterance",
            "max_sentences_per_utterance",
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    def to_dict(self):
        return {
            "max_chars_per_sentence": self.max_chars_per_sentence,
            "max_chars_per_utterance": self.max_chars_per_utterance,
            "max_sentences_per_utterance": self.max_sentences_per_utterance,
        }

    @classmethod
    def from_dict(cls, obj):
        return cls(
            int(obj["max_chars_per_sentence"]),
            int(obj["max_chars_per_utterance"]),
            int(obj["max_sentences_per_utterance"]),
        )


def load_normalization(path) -> NormalizationConfig:
    path = Path(path)
    if not path.exists():
        raise CorpusLoadError(f"normalization file not found: {path}")
    try:
        return NormalizationConfig.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise CorpusLoadError(f"unparsable normalization config {path}: {exc}") from exc


def normalization_from_utterances(utterances: Sequence[Utterance]) -> NormalizationConfig:
    """The tightest NormalizationConfig covering the given utterances."""
    max_sent_chars = 1
    max_utt_chars = 1
    max_sents = 1
    for utt in utterances:
        spans = utt.sentence_spans
        if spans:
            max_sent_chars = max(max_sent_chars, max(e - s for s, e in spans))
            max_utt_chars = max(max_utt_chars, sum(e - s for s, e in spans))
            max_sents = max(max_sents, len(spans))
    return NormalizationConfig(max_sent_chars, max_utt_chars, max_sents)


def compute_stat_features(
    utterance: Utterance,
    norm: NormalizationConfig,
    clamp: bool = False,
) -> np.ndarray:
    """The (n_chars, 6) statistical feature matrix of an utterance.

    With ``clamp=False`` (training), a count exceeding its normalization
    maximum raises :class:`NormalizationError`; with ``clamp=True``
    (inference), the normalized count saturates at 1.0 instead.
    """
    spans = utterance.sentence_spans
    n_chars = sum(e - s for s, e in spans)
    n_sentences = len(spans)

    def ratio(count, maximum, name):
        if count > maximum:
            if clamp:
                return 1.0
            raise NormalizationError(f"{name}: count {count} exceeds maximum {maximum}")
        return count / maximum

    f3 = ratio(n_chars, norm.max_chars_per_utterance, "max_chars_per_utterance")
    f5 = ratio(n_sentences, norm.max_sentences_per_utterance, "max_sentences_per_utterance")

    rows = np.zeros((n_chars, N_STAT_FEATURES), dtype=np.float64)
    utt_pos = 0
    for sent_idx, (s, e) in enumerate(spans):
        sent_len = e - s
        f1 = ratio(sent_len, norm.max_chars_per_sentence, "max_chars_per_sentence")
        f6 = (sent_idx + 1) / n_sentences
        for k in range(sent_len):
            rows[utt_pos] = (
                f1,
                (k + 1) / sent_len,
                f3,
                (utt_pos + 1) / n_chars,
                f5,
                f6,
            )
            utt_pos += 1
    return rows


def upsample_to_phonemes(
    char_matrix: np.ndarray,
    alignment: Sequence[tuple[int, int]],
    n_phonemes: int,
) -> np.ndarray:
    """Replicate character rows onto the phoneme positions they own.

    Positions owned by no character (punctuation, boundary symbols) get
    the all-zero row. Values are copied exactly, never interpolated.
    """
    char_matrix = np.asarray(char_matrix)
    if len(alignment) != char_matrix.shape[0]:
        raise AlignmentError(
            f"alignment has {len(alignment)} ranges for {char_matrix.shape[0]} rows"
        )
    out = np.zeros((n_phonemes, char_matrix.shape[1]), dtype=char_matrix.dtype)
    for char_idx, (s, e) in enumerate(alignment):
        if s < 0 or e < s or e > n_phonemes:
            raise AlignmentError(
                f"alignment range [{s}, {e}) outside phoneme range [0, {n_phonemes})"
            )
        out[s:e] = char_matrix[char_idx]
    return out


def stub_embedding(unit: str, dim: int, seed: int) -> np.ndarray:
    """Deterministic unit-norm pseudo-embedding of one string."""
    if dim < 1:
        raise ConfigError(f"embedding dim must be >= 1, got {dim}")
    digest = hashlib.blake2b(
        f"{seed}\x1f{unit}".encode("utf-8"), digest_size=8
    ).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    vec = rng.standard_normal(dim)
    norm = np.linalg.norm(vec)
    if norm < 1e-12:
        vec[0] = 1.0
        norm = 1.0
    return (vec / norm).astype(np.float32)


def stub_embedder(units: Sequence[str], dim: int, seed: int) -> np.ndarray:
    """Stack of :func:`stub_embedding` rows, shape (len(units), dim)."""
    if len(units) == 0:
        return np.zeros((0, dim), dtype=np.float32)
    return np.stack([stub_embedding(u, dim, seed) for u in units])


class EmbeddingProvider(Protocol):
    """Source of character-level and utterance-level text embeddings.

    ``embed_utterance`` returns ``(char_matrix, utterance_vector)`` with
    shapes ``(n_chars, dim)`` and ``(dim,)``. Providers wrapping wordpiece
    models must replicate each wordpiece vector across its characters.
    """

    dim: int

    def embed_utterance(self, text: str) -> tuple[np.ndarray, np.ndarray]: ...


class StubEmbeddingProvider:
    """Offline provider backed by :func:`stub_embedding`.

    Character vectors depend only on the character value, the utterance
    vector on the whole text, so identical texts embed identically.
    """

    def __init__(self, dim: int = BERT_DIM, seed: int = 0):
        self.dim = dim
        self.seed = seed

    def embed_utterance(self, text: str) -> tuple[np.ndarray, np.ndarray]:
        chars = stub_embedder(list(text), self.dim, self.seed)
        utt = stub_embedding(f"\x1e{text}", self.dim, self.seed)
        return chars, utt


class FileEmbeddingProvider:
    """Provider reading precomputed embeddings from a directory.

    Expects, per utterance key, ``<key>.chars.f32`` holding the
    (n_chars, dim) matrix and ``<key>.utt.f32`` holding the utterance
    vector, both in the flat-float32-plus-sidecar format.
    """

    def __init__(self, directory, dim: int = BERT_DIM):
        self.directory = Path(directory)
        self.dim = dim
        self._key = None

    def bind_key(self, key: str):
        self._key = key

    def embed_utterance(self, text: str) -> tuple[np.ndarray, np.ndarray]:
        if self._key is None:
            raise ConfigError("FileEmbeddingProvider used without a bound key")
        chars = load_embeddings(self.directory / f"{self._key}.chars.f32")
        utt = load_embeddings(self.directory / f"{self._key}.utt.f32")
        return chars, utt.reshape(-1)


def save_embeddings(path, matrix: np.ndarray):
    save_array(path, matrix)


def load_embeddings(path) -> np.ndarray:
    matrix, _ = load_array(path)
    return matrix


def build_char_feature_matrix(
    utterance: Utterance,
    char_embeddings: np.ndarray,
    norm: NormalizationConfig,
    clamp: bool = False,
) -> np.ndarray:
    """Concatenate character embeddings with their statistical features.

    Output shape is ``(n_chars, dim + 6)``, the auxiliary encoder's input.
    """
    char_embeddings = np.asarray(char_embeddings, dtype=np.float32)
    stats = compute_stat_features(utterance, norm, clamp=clamp)
    if char_embeddings.shape[0] != stats.shape[0]:
        raise AlignmentError(
            f"{char_embeddings.shape[0]} embedding rows vs {stats.shape[0]} characters"
        )
    return np.concatenate([char_embeddings, stats.astype(np.float32)], axis=1)
