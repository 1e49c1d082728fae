"""Auxiliary text encoder: prenet + CBHG over per-character features.

Consumes the (n_chars, embed + 6) character feature matrix, encodes it at
character rate, projects to the memory dimension, and replicates rows to
phoneme rate through the character alignment. The output projection is
zero-initialized so a freshly attached auxiliary encoder leaves the base
model's behavior untouched until finetuning moves it.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigError, InputError
from .layers import BatchNormConv1d, HighwayLayer, Prenet, zero_init_linear


@dataclass
class AuxEncoderConfig:
    in_dim: int = 774  # 768-dim embedding + 6 statistical features
    prenet_dims: tuple[int, int] = (256, 128)
    prenet_dropout: float = 0.5
    bank_k: int = 8
    bank_channels: int = 128
    proj_channels: int = 128
    proj_kernel: int = 3
    highway_layers: int = 4
    highway_units: int = 128
    gru_units: int = 128  # per direction
    out_dim: int = 512

    def __post_init__(self):
        if self.bank_k < 1 or self.highway_layers < 0:
            raise ConfigError("bank_k must be >= 1 and highway_layers >= 0")


class CBHG(nn.Module):
    """Conv bank + max-pool + projections + highway stack + BiGRU."""

    def __init__(self, in_dim: int, config: AuxEncoderConfig):
        super().__init__()
        self.bank = nn.ModuleList(
            BatchNormConv1d(in_dim, config.bank_channels, k, activation=torch.relu)
            for k in range(1, config.bank_k + 1)
        )
        self.max_pool = nn.Sequential(
            nn.ConstantPad1d((0, 1), 0.0), nn.MaxPool1d(2, stride=1)
        )
        self.proj1 = BatchNormConv1d(
            config.bank_k * config.bank_channels,
            config.proj_channels,
            config.proj_kernel,
            activation=torch.relu,
        )
        self.proj2 = BatchNormConv1d(
            config.proj_channels, in_dim, config.proj_kernel, activation=None
        )
        self.highway_in = (
            nn.Linear(in_dim, config.highway_units)
            if in_dim != config.highway_units
            else nn.Identity()
        )
        self.highways = nn.ModuleList(
            HighwayLayer(config.highway_units) for _ in range(config.highway_layers)
        )
        self.gru = nn.GRU(
            config.highway_units,
            config.gru_units,
            batch_first=True,
            bidirectional=True,
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, N, in_dim) -> (B, N, 2 * gru_units)."""
        y = x.transpose(1, 2)
        banked = torch.cat([conv(y) for conv in self.bank], dim=1)
        pooled = self.max_pool(banked)
        projected = self.proj2(self.proj1(pooled)).transpose(1, 2)
        h = self.highway_in(x + projected)
        for layer in self.highways:
            h = layer(h)
        out, _ = self.gru(h)
        return out


class AuxiliaryEncoder(nn.Module):
    def __init__(self, config: AuxEncoderConfig):
        super().__init__()
        self.config = config
        self.prenet = Prenet(
            config.in_dim, config.prenet_dims, p=config.prenet_dropout
        )
        self.cbhg = CBHG(self.prenet.out_dim, config)
        self.out_proj = zero_init_linear(
            nn.Linear(2 * config.gru_units, config.out_dim)
        )

    def forward(self, char_matrix: torch.Tensor, rng: torch.Generator | None = None):
        """Encode one utterance's (n_chars, in_dim) rows to (n_chars, out_dim)."""
        if char_matrix.ndim != 2 or char_matrix.shape[0] == 0:
            raise InputError("char_matrix must be (n_chars, in_dim) with n_chars >= 1")
        if char_matrix.shape[1] != self.config.in_dim:
            raise ConfigError(
                f"char_matrix feature dim {char_matrix.shape[1]} != configured "
                f"in_dim {self.config.in_dim}"
            )
        x = self.prenet(char_matrix, rng)
        encoded = self.cbhg(x.unsqueeze(0)).squeeze(0)
        return self.out_proj(encoded)


def replicate_to_phonemes(
    encoded_chars: torch.Tensor,
    alignment,
    n_phonemes: int,
) -> torch.Tensor:
    """Copy each character's encoding onto the phoneme positions it owns.

    Unowned positions (punctuation and boundary symbols) get zero rows.
    Differentiable: rows are gathered, not re-computed.
    """
    n_chars = encoded_chars.shape[0]
    if len(alignment) != n_chars:
        raise InputError(f"{len(alignment)} alignment ranges for {n_chars} characters")
    owner = torch.full((n_phonemes,), n_chars, dtype=torch.long, device=encoded_chars.device)
    for char_idx, (s, e) in enumerate(alignment):
        if s < 0 or e < s or e > n_phonemes:
            raise InputError(
                f"alignment range [{s}, {e}) outside phoneme range [0, {n_phonemes})"
            )
        owner[s:e] = char_idx
    zero_row = encoded_chars.new_zeros(1, encoded_chars.shape[1])
    return torch.cat([encoded_chars, zero_row], dim=0)[owner]


def encode_auxiliary(
    aux: AuxiliaryEncoder,
    char_matrix: torch.Tensor,
    alignment,
    n_phonemes: int,
    rng: torch.Generator | None = None,
) -> torch.Tensor:
    """Full auxiliary path: encode at character rate, then upsample.

    Returns the (n_phonemes, out_dim) additive contribution.
    """
    return replicate_to_phonemes(aux(char_matrix, rng), alignment, n_phonemes)


def combine_additive(memory: torch.Tensor, aux: torch.Tensor) -> torch.Tensor:
    """Elementwise sum of the base memory and the auxiliary contribution."""
    if memory.shape != aux.shape:
        raise InputError(f"shape mismatch: {tuple(memory.shape)} vs {tuple(aux.shape)}")
    return memory + aux
