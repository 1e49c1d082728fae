"""Shared network building blocks.

Stochastic layers here accept an optional ``torch.Generator`` so tests and
the synthesis CLI can pin every random draw; with ``rng=None`` they fall
back to torch's global generator.
"""

from __future__ import annotations

import torch
from torch import nn


def rand_like_via(x: torch.Tensor, rng: torch.Generator | None) -> torch.Tensor:
    return torch.rand(x.shape, generator=rng, dtype=x.dtype, device=x.device)


def randn_like_via(x: torch.Tensor, rng: torch.Generator | None) -> torch.Tensor:
    return torch.randn(x.shape, generator=rng, dtype=x.dtype, device=x.device)


def dropout(x: torch.Tensor, p: float, active: bool, rng: torch.Generator | None):
    """Inverted dropout that draws nothing when inactive or p == 0.

    Not drawing in the inactive case keeps generator state identical
    between model variants whose extra modules are disabled in eval mode.
    """
    if not active or p == 0.0:
        return x
    keep = (rand_like_via(x, rng) >= p).to(x.dtype)
    return x * keep / (1.0 - p)


class Prenet(nn.Module):
    """Feedforward bottleneck: Linear + ReLU + dropout per layer.

    ``always_dropout=True`` keeps dropout stochastic in eval mode too,
    which is how the decoder input prenet fights exposure bias.
    """

    def __init__(self, in_dim, layer_dims, p=0.5, always_dropout=False):
        super().__init__()
        dims = [in_dim] + list(layer_dims)
        self.layers = nn.ModuleList(
            nn.Linear(dims[i], dims[i + 1]) for i in range(len(layer_dims))
        )
        self.p = p
        self.always_dropout = always_dropout

    @property
    def out_dim(self):
        return self.layers[-1].out_features

    def forward(self, x, rng: torch.Generator | None = None):
        active = self.training or self.always_dropout
        for linear in self.layers:
            x = dropout(torch.relu(linear(x)), self.p, active, rng)
        return x


class BatchNormConv1d(nn.Module):
    """Conv1d + BatchNorm (+ optional activation) on (B, C, T) tensors."""

    def __init__(self, in_channels, out_channels, kernel_size, activation=None):
        super().__init__()
        # even kernels pad one extra sample on the right to preserve length
        left = (kernel_size - 1) // 2
        self.pad = nn.ConstantPad1d((left, kernel_size - 1 - left), 0.0)
        self.conv = nn.Conv1d(in_channels, out_channels, kernel_size)
        self.norm = nn.BatchNorm1d(out_channels, momentum=0.1)
        self.activation = activation

    def forward(self, x):
        y = self.norm(self.conv(self.pad(x)))
        return self.activation(y) if self.activation is not None else y


class HighwayLayer(nn.Module):
    def __init__(self, dim):
        super().__init__()
        self.transform = nn.Linear(dim, dim)
        self.gate = nn.Linear(dim, dim)
        # bias the gate toward carry so deep stacks start near identity
        nn.init.constant_(self.gate.bias, -1.0)

    def forward(self, x):
        h = torch.relu(self.transform(x))
        g = torch.sigmoid(self.gate(x))
        return g * h + (1.0 - g) * x


class ZoneoutLSTMCell(nn.Module):
    """LSTM cell with zoneout on both hidden and cell states.

    Training samples Bernoulli keep-masks at the zoneout rate; eval uses
    the deterministic expectation ``z * old + (1 - z) * new``. At rate 0
    the two modes coincide with a plain LSTM cell.
    """

    def __init__(self, input_size, hidden_size, zoneout=0.1):
        super().__init__()
        self.cell = nn.LSTMCell(input_size, hidden_size)
        self.hidden_size = hidden_size
        self.zoneout = zoneout

    def _blend(self, old, new, rng):
        z = self.zoneout
        if z == 0.0:
            return new
        if self.training:
            keep_old = (rand_like_via(old, rng) < z).to(old.dtype)
            return keep_old * old + (1.0 - keep_old) * new
        return z * old + (1.0 - z) * new

    def forward(self, x, state, rng: torch.Generator | None = None):
        h, c = state
        h_new, c_new = self.cell(x, (h, c))
        return self._blend(h, h_new, rng), self._blend(c, c_new, rng)


def zero_init_linear(linear: nn.Linear):
    """Zero a projection so a freshly added module contributes nothing."""
    nn.init.zeros_(linear.weight)
    if linear.bias is not None:
        nn.init.zeros_(linear.bias)
    return linear
