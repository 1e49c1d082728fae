"""Autoregressive mel decoder: prenet, zoneout LSTMs, SMA, output heads.

One decode step runs prenet(previous frame) -> LSTM1 -> LSTM2, scores the
memory with the second LSTM's output, advances the stepwise monotonic
alignment, and predicts the next mel frame and stop logit from
[attention context || LSTM2 output]. The input prenet keeps its dropout
active at inference; pass a seeded generator for reproducible synthesis.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .attention import StepwiseMonotonicEnergy, sma_step_masked
from .errors import ConfigError, InputError
from .layers import BatchNormConv1d, Prenet, ZoneoutLSTMCell, dropout, randn_like_via


@dataclass
class DecoderConfig:
    memory_dim: int = 512
    prenet_dims: tuple[int, int] = (256, 256)
    prenet_dropout: float = 0.5
    lstm_units: int = 1024
    zoneout: float = 0.1
    attn_dim: int = 128
    attn_noise_std: float = 1.0  # pre-sigmoid energy noise, train mode only
    attn_score_bias_init: float = 1.0
    mel_dim: int = 80
    reduction_factor: int = 1
    stop_threshold: float = 0.5
    max_frames: int = 2000
    postnet_channels: int = 512
    postnet_kernel: int = 5
    postnet_layers: int = 5
    postnet_dropout: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.stop_threshold < 1.0):
            raise ConfigError("stop_threshold must be in (0, 1)")
        if self.max_frames < 1:
            raise ConfigError("max_frames must be >= 1")
        if self.reduction_factor != 1:
            raise ConfigError("only reduction_factor=1 is supported")


@dataclass
class DecoderState:
    h1: torch.Tensor
    c1: torch.Tensor
    h2: torch.Tensor
    c2: torch.Tensor
    alignment: torch.Tensor  # (B, T) probability rows
    prev_frame: torch.Tensor  # (B, mel_dim)

    def tensors(self):
        return (self.h1, self.c1, self.h2, self.c2, self.alignment, self.prev_frame)


class Decoder(nn.Module):
    def __init__(self, config: DecoderConfig):
        super().__init__()
        self.config = config
        self.prenet = Prenet(
            config.mel_dim,
            config.prenet_dims,
            p=config.prenet_dropout,
            always_dropout=True,
        )
        self.lstm1 = ZoneoutLSTMCell(self.prenet.out_dim, config.lstm_units, config.zoneout)
        self.lstm2 = ZoneoutLSTMCell(config.lstm_units, config.lstm_units, config.zoneout)
        self.energy = StepwiseMonotonicEnergy(
            config.lstm_units,
            config.memory_dim,
            config.attn_dim,
            score_bias_init=config.attn_score_bias_init,
        )
        head_in = config.memory_dim + config.lstm_units
        self.mel_head = nn.Linear(head_in, config.mel_dim)
        self.stop_head = nn.Linear(head_in, 1)

    def init_state(self, batch: int, memory_len: int, *, dtype, device) -> DecoderState:
        """All-zero recurrent state, alignment one-hot at position 0."""
        u = self.config.lstm_units
        zeros = lambda *shape: torch.zeros(*shape, dtype=dtype, device=device)
        alignment = zeros(batch, memory_len)
        alignment[:, 0] = 1.0
        return DecoderState(
            h1=zeros(batch, u),
            c1=zeros(batch, u),
            h2=zeros(batch, u),
            c2=zeros(batch, u),
            alignment=alignment,
            prev_frame=zeros(batch, self.config.mel_dim),
        )

    def step(
        self,
        state: DecoderState,
        memory: torch.Tensor,
        processed_memory: torch.Tensor | None = None,
        lengths: torch.Tensor | None = None,
        rng: torch.Generator | None = None,
    ):
        """One decode step over a (B, T, memory_dim) batch.

        Returns ``(frame, stop_logit, new_state)``; the new state carries
        the predicted frame, so teacher forcing replaces ``prev_frame``
        before the next call.
        """
        for t in state.tensors():
            if not torch.isfinite(t).all():
                raise InputError("decoder state contains non-finite values")
        if state.alignment.shape[-1] != memory.shape[-2]:
            raise InputError("alignment length does not match memory rows")
        if processed_memory is None:
            processed_memory = self.energy.process_memory(memory)
        x = self.prenet(state.prev_frame, rng)
        h1, c1 = self.lstm1(x, (state.h1, state.c1), rng)
        h2, c2 = self.lstm2(h1, (state.h2, state.c2), rng)
        energies = self.energy(h2, processed_memory)
        if self.training and self.config.attn_noise_std > 0:
            energies = energies + self.config.attn_noise_std * randn_like_via(energies, rng)
        alignment = sma_step_masked(state.alignment, energies, lengths)
        context = torch.bmm(alignment.unsqueeze(1), memory).squeeze(1)
        hidden = torch.cat([context, h2], dim=-1)
        frame = self.mel_head(hidden)
        stop_logit = self.stop_head(hidden).squeeze(-1)
        new_state = DecoderState(h1, c1, h2, c2, alignment, frame)
        return frame, stop_logit, new_state


def decode_step(
    decoder: Decoder,
    state: DecoderState,
    memory: torch.Tensor,
    rng: torch.Generator | None = None,
):
    """Unbatched convenience wrapper over :meth:`Decoder.step`.

    ``memory`` is (T, memory_dim); state tensors carry batch size 1.
    """
    frame, stop_logit, new_state = decoder.step(state, memory.unsqueeze(0), rng=rng)
    return frame.squeeze(0), stop_logit.squeeze(0), new_state


class Postnet(nn.Module):
    """Five-conv residual refiner over the predicted mel sequence."""

    def __init__(self, config: DecoderConfig):
        super().__init__()
        mel, ch, k = config.mel_dim, config.postnet_channels, config.postnet_kernel
        n = config.postnet_layers
        if n < 2:
            raise ConfigError("postnet needs at least 2 layers")
        layers = [BatchNormConv1d(mel, ch, k, activation=torch.tanh)]
        for _ in range(n - 2):
            layers.append(BatchNormConv1d(ch, ch, k, activation=torch.tanh))
        layers.append(BatchNormConv1d(ch, mel, k, activation=None))
        self.convs = nn.ModuleList(layers)
        self.p = config.postnet_dropout

    def forward(self, mel: torch.Tensor, rng: torch.Generator | None = None):
        """(..., n_frames, mel_dim) -> residual of the same shape."""
        squeeze = mel.ndim == 2
        x = mel.unsqueeze(0) if squeeze else mel
        x = x.transpose(1, 2)
        for conv in self.convs:
            x = dropout(conv(x), self.p, self.training, rng)
        x = x.transpose(1, 2)
        return x.squeeze(0) if squeeze else x


def synthesize_utterance(
    decoder: Decoder,
    postnet: Postnet,
    memory: torch.Tensor,
    rng: torch.Generator | None = None,
    max_frames: int | None = None,
):
    """Free-running synthesis over a single (T, memory_dim) memory.

    Decodes from a zero frame and a position-0 one-hot alignment until
    ``sigmoid(stop) > stop_threshold`` or the frame cap; returns
    ``(mel, alignments, stopped)`` with the postnet residual applied.
    """
    if memory.ndim != 2 or memory.shape[0] == 0:
        raise InputError("memory must be (T, memory_dim) with T >= 1")
    cfg = decoder.config
    cap = cfg.max_frames if max_frames is None else max_frames
    if cap < 1:
        raise ConfigError("max_frames must be >= 1")
    batched = memory.unsqueeze(0)
    with torch.no_grad():
        processed = decoder.energy.process_memory(batched)
        state = decoder.init_state(1, memory.shape[0], dtype=memory.dtype, device=memory.device)
        frames, alignments = [], []
        stopped = False
        for _ in range(cap):
            frame, stop_logit, state = decoder.step(state, batched, processed, rng=rng)
            frames.append(frame)
            alignments.append(state.alignment)
            if torch.sigmoid(stop_logit).item() > cfg.stop_threshold:
                stopped = True
                break
        mel_before = torch.cat(frames, dim=0)
        mel = mel_before + postnet(mel_before, rng)
        alignment_matrix = torch.cat(alignments, dim=0)
    return mel, alignment_matrix, stopped
