"""Model variants and their assembly.

M1 is the base phoneme-encoder + SMA decoder. M2 adds the auxiliary
character-feature encoder, M3 additionally the conversation context
encoder. Both add-on modules end in zero-initialized projections, so a
variant grown from a smaller checkpoint reproduces it exactly until
training moves the new weights.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import torch
from torch import nn
from torch.nn import functional as F

from .aux_encoder import AuxEncoderConfig, AuxiliaryEncoder, encode_auxiliary
from .context_encoder import (
    ChatHistory,
    ContextEncoder,
    ContextEncoderConfig,
    encode_context,
)
from .decoder import Decoder, DecoderConfig, Postnet, synthesize_utterance
from .encoder import EncoderConfig, PhonemeEncoder
from .errors import ConfigError, InputError
from .features import N_STAT_FEATURES

VARIANTS = ("M1", "M2", "M3")


@dataclass
class ModelConfig:
    variant: str
    encoder: EncoderConfig
    aux: AuxEncoderConfig
    context: ContextEncoderConfig
    decoder: DecoderConfig

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        mem = self.encoder.memory_dim
        if self.decoder.memory_dim != mem:
            raise ConfigError("decoder memory_dim must equal encoder memory dim")
        if self.uses_aux and self.aux.out_dim != mem:
            raise ConfigError("auxiliary out_dim must equal encoder memory dim")
        if self.uses_context and self.context.out_dim != mem:
            raise ConfigError("context out_dim must equal encoder memory dim")
        if self.uses_aux and self.uses_context and self.embedding_dim != self.context.embed_dim:
            raise ConfigError(
                "one provider feeds both paths: aux.in_dim - 6 must equal "
                f"context embed_dim, got {self.embedding_dim} vs {self.context.embed_dim}"
            )

    @property
    def uses_aux(self) -> bool:
        return self.variant in ("M2", "M3")

    @property
    def uses_context(self) -> bool:
        return self.variant == "M3"

    @property
    def embedding_dim(self) -> int:
        return self.aux.in_dim - N_STAT_FEATURES

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        aux = dict(obj["aux"])
        aux["prenet_dims"] = tuple(aux["prenet_dims"])
        dec = dict(obj["decoder"])
        dec["prenet_dims"] = tuple(dec["prenet_dims"])
        return cls(
            variant=obj["variant"],
            encoder=EncoderConfig(**obj["encoder"]),
            aux=AuxEncoderConfig(**aux),
            context=ContextEncoderConfig(**obj["context"]),
            decoder=DecoderConfig(**dec),
        )


def default_model_config(
    inventory_size: int, variant: str = "M1", embedding_dim: int = 768
) -> ModelConfig:
    """Full-scale configuration (512-dim memory)."""
    return ModelConfig(
        variant=variant,
        encoder=EncoderConfig(inventory_size=inventory_size),
        aux=AuxEncoderConfig(in_dim=embedding_dim + N_STAT_FEATURES),
        context=ContextEncoderConfig(embed_dim=embedding_dim),
        decoder=DecoderConfig(),
    )


def desk_model_config(
    inventory_size: int, variant: str = "M1", embedding_dim: int = 32
) -> ModelConfig:
    """Reduced configuration for CPU-scale training and tests.

    Memory dim 128 (embed 64, conv 64, BLSTM 64 per direction); all other
    blocks shrink proportionally.
    """
    return ModelConfig(
        variant=variant,
        encoder=EncoderConfig(
            inventory_size=inventory_size,
            embed_dim=64,
            conv_channels=64,
            blstm_units=64,
        ),
        aux=AuxEncoderConfig(
            in_dim=embedding_dim + N_STAT_FEATURES,
            prenet_dims=(32, 16),
            bank_k=4,
            bank_channels=16,
            proj_channels=16,
            highway_layers=2,
            highway_units=16,
            gru_units=16,
            out_dim=128,
        ),
        context=ContextEncoderConfig(
            embed_dim=embedding_dim,
            proj_dim=16,
            gru_units=16,
            out_dim=128,
        ),
        decoder=DecoderConfig(
            memory_dim=128,
            prenet_dims=(64, 64),
            lstm_units=128,
            attn_dim=64,
            postnet_channels=64,
        ),
    )


@dataclass
class UtteranceInputs:
    """Everything the model needs to encode one utterance."""

    phoneme_ids: torch.Tensor  # (T,) long
    char_matrix: Optional[torch.Tensor] = None  # (n_chars, aux in_dim)
    char_alignment: Optional[Sequence[tuple[int, int]]] = None
    history: Optional[ChatHistory] = None


class ConversationalTTS(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.encoder = PhonemeEncoder(config.encoder)
        self.decoder = Decoder(config.decoder)
        self.postnet = Postnet(config.decoder)
        if config.uses_aux:
            self.aux = AuxiliaryEncoder(config.aux)
        if config.uses_context:
            self.context = ContextEncoder(config.context)

    @property
    def variant(self) -> str:
        return self.config.variant

    def _check_inputs(self, inputs: UtteranceInputs):
        if self.config.uses_aux and (
            inputs.char_matrix is None or inputs.char_alignment is None
        ):
            raise InputError(f"variant {self.variant} needs char features and alignment")
        if self.config.uses_context and inputs.history is None:
            raise InputError(f"variant {self.variant} needs a chat history")

    def encode_utterance(
        self, inputs: UtteranceInputs, rng: torch.Generator | None = None
    ) -> torch.Tensor:
        """Combined (T, memory_dim) memory for one utterance."""
        self._check_inputs(inputs)
        memory = self.encoder(inputs.phoneme_ids.unsqueeze(0), rng=rng).squeeze(0)
        n_phonemes = memory.shape[0]
        if self.config.uses_aux:
            contribution = encode_auxiliary(
                self.aux, inputs.char_matrix, inputs.char_alignment, n_phonemes, rng
            )
            memory = memory + contribution
        if self.config.uses_context:
            ctx = encode_context(
                self.context, inputs.history, dtype=memory.dtype, device=memory.device
            )
            memory = memory + ctx.unsqueeze(0)
        return memory

    def encode_batch(
        self,
        items: Sequence[UtteranceInputs],
        rng: torch.Generator | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Pad and encode a batch; returns (memory (B, T, D), lengths (B,)).

        The phoneme encoder runs batched (packed BLSTM); auxiliary and
        context contributions are per-item and padded back in.
        """
        if not items:
            raise InputError("empty batch")
        for item in items:
            self._check_inputs(item)
        lengths = torch.tensor([it.phoneme_ids.shape[0] for it in items], dtype=torch.long)
        max_len = int(lengths.max())
        ids = torch.stack(
            [F.pad(it.phoneme_ids, (0, max_len - it.phoneme_ids.shape[0])) for it in items]
        )
        memory = self.encoder(ids, lengths, rng)
        if self.config.uses_aux:
            pads = []
            for item, n in zip(items, lengths.tolist()):
                contribution = encode_auxiliary(
                    self.aux, item.char_matrix, item.char_alignment, n, rng
                )
                pads.append(F.pad(contribution, (0, 0, 0, max_len - n)))
            memory = memory + torch.stack(pads)
        if self.config.uses_context:
            vectors = [
                encode_context(
                    self.context, item.history, dtype=memory.dtype, device=memory.device
                )
                for item in items
            ]
            memory = memory + torch.stack(vectors).unsqueeze(1)
        return memory, lengths

    def synthesize(
        self,
        inputs: UtteranceInputs,
        rng: torch.Generator | None = None,
        max_frames: int | None = None,
    ):
        """Free-running synthesis; returns (mel, alignments, stopped)."""
        memory = self.encode_utterance(inputs, rng)
        return synthesize_utterance(
            self.decoder, self.postnet, memory, rng=rng, max_frames=max_frames
        )
