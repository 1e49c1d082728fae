"""Soft stepwise monotonic attention.

Each decoder step turns per-position energies into stay probabilities
``p = sigmoid(energy)`` and propagates the previous alignment forward:
mass at position j stays with probability ``p_j`` and moves to ``j + 1``
with probability ``1 - p_j``. The final position absorbs (its outflow is
folded back), which makes the step an exact map from the probability
simplex to itself: total mass is conserved, prefix mass never increases,
and mass advances at most one position per step.
"""

from __future__ import annotations

import torch
from torch import nn

from .errors import InputError


def sma_step(prev: torch.Tensor, energies: torch.Tensor) -> torch.Tensor:
    """One stepwise-monotonic-attention update.

    ``prev`` and ``energies`` share a trailing time axis; leading batch
    dimensions are broadcast through unchanged.
    """
    if prev.shape != energies.shape:
        raise InputError(
            f"alignment shape {tuple(prev.shape)} != energies shape {tuple(energies.shape)}"
        )
    if prev.shape[-1] == 0:
        raise InputError("alignment must cover at least one memory row")
    if not torch.isfinite(energies).all():
        raise InputError("energies must be finite")
    p = torch.sigmoid(energies)
    stay = prev * p
    if prev.shape[-1] == 1:
        return prev.clone()
    moved = prev[..., :-1] * (1.0 - p[..., :-1])
    out = torch.cat([stay[..., :1], stay[..., 1:] + moved], dim=-1)
    absorb = prev[..., -1:] * (1.0 - p[..., -1:])
    return torch.cat([out[..., :-1], out[..., -1:] + absorb], dim=-1)


def sma_step_masked(
    prev: torch.Tensor,
    energies: torch.Tensor,
    lengths: torch.Tensor | None,
) -> torch.Tensor:
    """Batched SMA update over padded memories.

    Positions from each item's last real row onward are pinned to "stay"
    so no mass ever leaks into padding; rows past the length keep their
    (zero) mass.
    """
    if lengths is None:
        return sma_step(prev, energies)
    idx = torch.arange(prev.shape[-1], device=prev.device).unsqueeze(0)
    pinned = idx >= (lengths.to(prev.device).unsqueeze(1) - 1)
    # sigmoid(+40) == 1.0 in both float32 and float64
    energies = torch.where(pinned, torch.full_like(energies, 40.0), energies)
    return sma_step(prev, energies)


class StepwiseMonotonicEnergy(nn.Module):
    """Additive energy: v . tanh(W_q q + W_m m_j) + b, one score per row."""

    def __init__(self, query_dim: int, memory_dim: int, attn_dim: int = 128,
                 score_bias_init: float = 1.0):
        super().__init__()
        self.query_layer = nn.Linear(query_dim, attn_dim, bias=False)
        self.memory_layer = nn.Linear(memory_dim, attn_dim, bias=False)
        self.v = nn.Linear(attn_dim, 1, bias=True)
        # positive initial bias favors staying, which stabilizes early alignments
        nn.init.constant_(self.v.bias, score_bias_init)

    def process_memory(self, memory: torch.Tensor) -> torch.Tensor:
        """Precompute W_m m for all rows; memory is (B, T, memory_dim)."""
        return self.memory_layer(memory)

    def forward(self, query: torch.Tensor, processed_memory: torch.Tensor) -> torch.Tensor:
        q = self.query_layer(query).unsqueeze(1)
        return self.v(torch.tanh(processed_memory + q)).squeeze(-1)
