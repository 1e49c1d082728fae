"""Conversation context encoder.

The chat history is a sequence of (utterance embedding, speaker id)
entries, oldest first, with the current utterance last. Every entry goes
through a shared linear + LeakyReLU projection; the past entries,
truncated to the most recent ``capacity``, run through a GRU whose final
state summarizes the past; the output layer maps
[past state || projected current] to a single memory-dim vector that is
broadcast-added onto the encoder memory.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, InputError
from .layers import zero_init_linear


@dataclass
class ContextEncoderConfig:
    embed_dim: int = 768
    proj_dim: int = 64
    gru_units: int = 64
    out_dim: int = 512
    capacity: int = 10  # max past utterances visible to the GRU
    leaky_slope: float = 0.01

    def __post_init__(self):
        if self.capacity < 0:
            raise ConfigError("capacity must be >= 0")

    @property
    def in_dim(self) -> int:
        return self.embed_dim + 1  # embedding plus the speaker scalar


@dataclass
class UtteranceEmbedding:
    vector: np.ndarray
    speaker_id: int  # agent = 1, customer = 0


@dataclass
class ChatHistory:
    """Entries oldest first; the last entry is the current utterance."""

    entries: list[UtteranceEmbedding] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def append(self, entry: UtteranceEmbedding):
        self.entries.append(entry)


def history_to_tensor(
    history: ChatHistory | Sequence[UtteranceEmbedding],
    embed_dim: int,
    *,
    dtype=torch.float32,
    device=None,
) -> torch.Tensor:
    """Stack history entries into an (n, embed_dim + 1) tensor."""
    entries = history.entries if isinstance(history, ChatHistory) else list(history)
    if not entries:
        raise InputError("chat history must contain the current utterance")
    rows = []
    for entry in entries:
        vec = np.asarray(entry.vector, dtype=np.float64).reshape(-1)
        if vec.shape[0] != embed_dim:
            raise InputError(
                f"utterance embedding dim {vec.shape[0]} != {embed_dim}"
            )
        if entry.speaker_id not in (0, 1):
            raise InputError(f"speaker id must be 0 or 1, got {entry.speaker_id}")
        rows.append(np.concatenate([vec, [float(entry.speaker_id)]]))
    return torch.as_tensor(np.stack(rows), dtype=dtype, device=device)


class ContextEncoder(nn.Module):
    def __init__(self, config: ContextEncoderConfig):
        super().__init__()
        self.config = config
        self.proj = nn.Linear(config.in_dim, config.proj_dim)
        self.act = nn.LeakyReLU(config.leaky_slope)
        self.gru = nn.GRU(config.proj_dim, config.gru_units, batch_first=True)
        self.out = zero_init_linear(
            nn.Linear(config.gru_units + config.proj_dim, config.out_dim)
        )

    def forward(self, entries: torch.Tensor) -> torch.Tensor:
        """(n, embed_dim + 1) history rows -> (out_dim,) context vector."""
        if entries.ndim != 2 or entries.shape[0] == 0:
            raise InputError("history tensor must be (n, embed_dim + 1) with n >= 1")
        if entries.shape[1] != self.config.in_dim:
            raise InputError(
                f"history feature dim {entries.shape[1]} != {self.config.in_dim}"
            )
        projected = self.act(self.proj(entries))
        current = projected[-1]
        past = projected[:-1]
        if self.config.capacity > 0:
            past = past[-self.config.capacity:]
        else:
            past = past[:0]
        if past.shape[0] == 0:
            past_state = entries.new_zeros(self.config.gru_units)
        else:
            _, h_n = self.gru(past.unsqueeze(0))
            past_state = h_n[0, 0]
        return self.out(torch.cat([past_state, current], dim=-1))


def encode_context(
    encoder: ContextEncoder,
    history: ChatHistory | Sequence[UtteranceEmbedding],
    *,
    dtype=None,
    device=None,
) -> torch.Tensor:
    """Encode a chat history into the (out_dim,) conditioning vector."""
    if dtype is None:
        dtype = next(encoder.parameters()).dtype
    entries = history_to_tensor(
        history, encoder.config.embed_dim, dtype=dtype, device=device
    )
    return encoder(entries)


def broadcast_combine(memory: torch.Tensor, ctx: torch.Tensor) -> torch.Tensor:
    """Add the context vector to every row of the (T, D) memory."""
    if memory.ndim != 2 or ctx.ndim != 1 or memory.shape[1] != ctx.shape[0]:
        raise InputError(
            f"cannot broadcast context {tuple(ctx.shape)} over memory {tuple(memory.shape)}"
        )
    return memory + ctx.unsqueeze(0)
