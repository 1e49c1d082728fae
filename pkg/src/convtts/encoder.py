"""Base phoneme encoder: embedding, conv stack, bidirectional LSTM."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .errors import ConfigError, InputError
from .layers import BatchNormConv1d, dropout


@dataclass
class EncoderConfig:
    inventory_size: int
    embed_dim: int = 512
    conv_channels: int = 512
    conv_layers: int = 3
    conv_kernel: int = 5
    blstm_units: int = 256  # per direction
    conv_dropout: float = 0.5
    lstm_dropout: float = 0.1

    def __post_init__(self):
        if self.inventory_size < 1:
            raise ConfigError("inventory_size must be >= 1")
        if self.conv_kernel % 2 != 1:
            raise ConfigError("conv_kernel must be odd")

    @property
    def memory_dim(self) -> int:
        return 2 * self.blstm_units


class PhonemeEncoder(nn.Module):
    """Maps a phoneme-id sequence to the (T, memory_dim) encoder memory.

    Eval mode is fully deterministic: dropout is disabled and batch norm
    runs on its accumulated statistics.
    """

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.embedding = nn.Embedding(config.inventory_size, config.embed_dim)
        convs = []
        in_channels = config.embed_dim
        for _ in range(config.conv_layers):
            convs.append(
                BatchNormConv1d(
                    in_channels, config.conv_channels, config.conv_kernel,
                    activation=torch.relu,
                )
            )
            in_channels = config.conv_channels
        self.convs = nn.ModuleList(convs)
        self.blstm = nn.LSTM(
            in_channels,
            config.blstm_units,
            batch_first=True,
            bidirectional=True,
        )

    def conv_stack(
        self,
        embedded: torch.Tensor,
        lengths: torch.Tensor | None = None,
        rng=None,
    ) -> torch.Tensor:
        """The convolutional sub-block alone, (B, T, E) -> (B, T, C).

        With ``lengths``, activations past each item's length are zeroed
        after every layer so a padded batch encodes each item exactly as
        it would alone. Exposed so the receptive-field locality of the
        stack can be checked without the recurrence on top.
        """
        mask = None
        if lengths is not None:
            idx = torch.arange(embedded.shape[1], device=embedded.device)
            mask = (idx.unsqueeze(0) < lengths.to(embedded.device).unsqueeze(1))
            mask = mask.unsqueeze(1).to(embedded.dtype)
        x = embedded.transpose(1, 2)
        if mask is not None:
            x = x * mask
        for conv in self.convs:
            x = dropout(conv(x), self.config.conv_dropout, self.training, rng)
            if mask is not None:
                x = x * mask
        return x.transpose(1, 2)

    def forward(
        self,
        ids: torch.Tensor,
        lengths: torch.Tensor | None = None,
        rng: torch.Generator | None = None,
    ) -> torch.Tensor:
        """Encode a (B, T) batch of phoneme ids into (B, T, memory_dim)."""
        if ids.ndim != 2 or ids.shape[1] == 0:
            raise InputError("phoneme id batch must be (B, T) with T >= 1")
        if ids.numel() and (ids.min() < 0 or ids.max() >= self.config.inventory_size):
            raise InputError(
                f"phoneme id out of range [0, {self.config.inventory_size})"
            )
        x = self.conv_stack(self.embedding(ids), lengths, rng)
        if lengths is not None:
            packed = pack_padded_sequence(
                x, lengths.cpu(), batch_first=True, enforce_sorted=False
            )
            out, _ = self.blstm(packed)
            out, _ = pad_packed_sequence(out, batch_first=True, total_length=ids.shape[1])
        else:
            out, _ = self.blstm(x)
        return dropout(out, self.config.lstm_dropout, self.training, rng)


def encode_phonemes(
    encoder: PhonemeEncoder,
    ids: torch.Tensor,
    rng: torch.Generator | None = None,
) -> torch.Tensor:
    """Single-sequence convenience wrapper: (T,) ids -> (T, memory_dim)."""
    if ids.ndim != 1 or ids.shape[0] == 0:
        raise InputError("phoneme id sequence must be 1-D and non-empty")
    return encoder(ids.unsqueeze(0), rng=rng).squeeze(0)
