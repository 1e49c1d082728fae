"""Losses, schedule, teacher-forced training, and the finetune strategy.

The objective is masked MSE on the mel output before and after the
postnet plus masked binary cross-entropy on the stop logits; padding
frames are excluded from every mean. The learning rate decays
exponentially from ``lr_start`` to ``lr_end`` over ``decay_steps`` and
stays constant afterwards.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from torch.nn import functional as F

from .checkpoint import apply_checkpoint, load_checkpoint, save_checkpoint
from .context_encoder import ChatHistory, UtteranceEmbedding
from .corpus import Conversation, CorpusManifest, PhonemeInventory
from .errors import ConfigError, InputError, TrainingDivergedError
from .features import (
    NormalizationConfig,
    build_char_feature_matrix,
)
from .mel import MelConfig, extract_mel, read_wav
from .model import ConversationalTTS, ModelConfig, UtteranceInputs, VARIANTS


@dataclass
class TrainConfig:
    batch_size: int = 32
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    lr_start: float = 1e-3
    lr_end: float = 1e-5
    decay_steps: int = 50000
    model_variant: str = "M1"
    seed: int = 0
    steps: int = 1000
    checkpoint_every: Optional[int] = None
    stop_pos_weight: float = 5.0  # final-frame class weight in the stop BCE
    grad_clip_norm: Optional[float] = 1.0
    precision: str = "float32"

    def __post_init__(self):
        if not (0 < self.lr_end < self.lr_start):
            raise ConfigError("need 0 < lr_end < lr_start")
        if self.decay_steps < 1:
            raise ConfigError("decay_steps must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.model_variant not in VARIANTS:
            raise ConfigError(f"model_variant must be one of {VARIANTS}")
        if self.precision not in ("float32", "float64"):
            raise ConfigError("precision must be float32 or float64")

    @property
    def dtype(self):
        return torch.float64 if self.precision == "float64" else torch.float32

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "lr_start": self.lr_start,
            "lr_end": self.lr_end,
            "decay_steps": self.decay_steps,
            "model_variant": self.model_variant,
            "seed": self.seed,
            "steps": self.steps,
            "checkpoint_every": self.checkpoint_every,
            "stop_pos_weight": self.stop_pos_weight,
            "grad_clip_norm": self.grad_clip_norm,
            "precision": self.precision,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        return cls(**obj)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Exponential decay reaching lr_end exactly at decay_steps, flat after."""
    if step < 0:
        raise ConfigError("step must be >= 0")
    fraction = min(step, cfg.decay_steps) / cfg.decay_steps
    return cfg.lr_start * (cfg.lr_end / cfg.lr_start) ** fraction


@dataclass
class LossBreakdown:
    mel_before: torch.Tensor
    mel_after: torch.Tensor
    stop: torch.Tensor
    total: torch.Tensor

    def to_floats(self) -> dict:
        return {
            "mel_before": float(self.mel_before.detach()),
            "mel_after": float(self.mel_after.detach()),
            "stop": float(self.stop.detach()),
            "total": float(self.total.detach()),
        }


def stop_targets_for(lengths: torch.Tensor, max_frames: int) -> torch.Tensor:
    """1 on each item's final frame and its padding region, 0 before."""
    idx = torch.arange(max_frames).unsqueeze(0)
    return (idx >= (lengths.unsqueeze(1) - 1)).to(torch.float32)


def compute_loss(
    pred_before: torch.Tensor,
    pred_after: torch.Tensor,
    target_mel: torch.Tensor,
    stop_logits: torch.Tensor,
    stop_targets: torch.Tensor,
    lengths: torch.Tensor,
    pos_weight: float = 1.0,
) -> LossBreakdown:
    """Masked training objective; padding is excluded from every mean."""
    if not (pred_before.shape == pred_after.shape == target_mel.shape):
        raise InputError("mel prediction/target shapes disagree")
    if stop_logits.shape != stop_targets.shape or stop_logits.shape != pred_before.shape[:2]:
        raise InputError("stop logit/target shapes disagree with the mel batch")
    if lengths.shape[0] != pred_before.shape[0]:
        raise InputError("lengths must hold one entry per batch item")
    n_frames = pred_before.shape[1]
    mask = (
        torch.arange(n_frames, device=pred_before.device).unsqueeze(0)
        < lengths.unsqueeze(1)
    ).to(pred_before.dtype)
    valid = mask.sum()
    if valid == 0:
        raise InputError("batch contains no unmasked frames")
    mel_dim = pred_before.shape[2]

    def masked_mse(pred):
        err = (pred - target_mel) ** 2 * mask.unsqueeze(2)
        return err.sum() / (valid * mel_dim)

    bce = F.binary_cross_entropy_with_logits(
        stop_logits,
        stop_targets.to(stop_logits.dtype),
        pos_weight=torch.tensor(pos_weight, dtype=stop_logits.dtype),
        reduction="none",
    )
    stop = (bce * mask).sum() / valid
    mel_before = masked_mse(pred_before)
    mel_after = masked_mse(pred_after)
    return LossBreakdown(mel_before, mel_after, stop, mel_before + mel_after + stop)


@dataclass
class TrainingExample:
    conversation_id: str
    turn_index: int
    phoneme_ids: np.ndarray  # (T,) int64
    mel: np.ndarray  # (n_frames, mel_dim) float32
    char_matrix: Optional[np.ndarray] = None
    char_alignment: Optional[list[tuple[int, int]]] = None
    history: Optional[ChatHistory] = None
    text: str = ""


@dataclass
class Batch:
    items: list[UtteranceInputs]
    targets: torch.Tensor  # (B, L, mel_dim)
    frame_lengths: torch.Tensor  # (B,)
    stop_targets: torch.Tensor  # (B, L)


def collate(
    examples: Sequence[TrainingExample],
    variant: str,
    dtype=torch.float32,
) -> Batch:
    if not examples:
        raise InputError("cannot collate an empty batch")
    items = []
    for ex in examples:
        char_matrix = None
        if variant in ("M2", "M3"):
            if ex.char_matrix is None:
                raise InputError(f"example {ex.conversation_id} lacks char features")
            char_matrix = torch.as_tensor(ex.char_matrix, dtype=dtype)
        items.append(
            UtteranceInputs(
                phoneme_ids=torch.as_tensor(ex.phoneme_ids, dtype=torch.long),
                char_matrix=char_matrix,
                char_alignment=ex.char_alignment,
                history=ex.history if variant == "M3" else None,
            )
        )
    lengths = torch.tensor([ex.mel.shape[0] for ex in examples], dtype=torch.long)
    max_frames = int(lengths.max())
    mel_dim = examples[0].mel.shape[1]
    targets = torch.zeros(len(examples), max_frames, mel_dim, dtype=dtype)
    for i, ex in enumerate(examples):
        targets[i, : ex.mel.shape[0]] = torch.as_tensor(ex.mel, dtype=dtype)
    return Batch(
        items=items,
        targets=targets,
        frame_lengths=lengths,
        stop_targets=stop_targets_for(lengths, max_frames).to(dtype),
    )


def teacher_forced_forward(
    model: ConversationalTTS,
    batch: Batch,
    rng: torch.Generator | None = None,
):
    """Decode with ground-truth previous frames.

    Returns ``(pred_before, pred_after, stop_logits, alignments)``; the
    output frame count equals the target frame count exactly.
    """
    memory, mem_lengths = model.encode_batch(batch.items, rng)
    processed = model.decoder.energy.process_memory(memory)
    state = model.decoder.init_state(
        memory.shape[0], memory.shape[1], dtype=memory.dtype, device=memory.device
    )
    n_frames = batch.targets.shape[1]
    frames, stops, aligns = [], [], []
    for t in range(n_frames):
        frame, stop_logit, state = model.decoder.step(
            state, memory, processed, mem_lengths, rng
        )
        frames.append(frame)
        stops.append(stop_logit)
        aligns.append(state.alignment)
        state = replace(state, prev_frame=batch.targets[:, t])
    pred_before = torch.stack(frames, dim=1)
    pred_after = pred_before + model.postnet(pred_before, rng)
    return pred_before, pred_after, torch.stack(stops, dim=1), torch.stack(aligns, dim=1)


def prepare_examples(
    conversations: Sequence[Conversation],
    manifest: CorpusManifest,
    inventory: PhonemeInventory,
    norm: NormalizationConfig,
    provider,
    mel_config: MelConfig,
    variant: str = "M3",
) -> list[TrainingExample]:
    """Turn validated conversations into trainable examples.

    Only agent turns (the ones carrying audio) become examples, but every
    turn's utterance embedding enters the running chat history. Embedding
    and char-feature work is skipped entirely for M1.
    """
    needs_embeddings = variant in ("M2", "M3") or provider is not None
    examples: list[TrainingExample] = []
    for conv in conversations:
        past: list[UtteranceEmbedding] = []
        for turn in conv.turns:
            utt = turn.utterance
            speaker_id = 1 if turn.speaker == manifest.agent_label else 0
            char_emb = utt_emb = None
            if needs_embeddings:
                if hasattr(provider, "bind_key"):
                    provider.bind_key(f"{conv.id}.t{turn.index:03d}")
                char_emb, utt_emb = provider.embed_utterance(utt.text)
            current = (
                UtteranceEmbedding(vector=utt_emb, speaker_id=speaker_id)
                if utt_emb is not None
                else None
            )
            if turn.speaker == manifest.agent_label:
                waveform, _ = read_wav(
                    manifest.root / turn.audio_path, mel_config.sample_rate
                )
                melspec = extract_mel(waveform, mel_config)
                char_matrix = None
                if variant in ("M2", "M3"):
                    char_matrix = build_char_feature_matrix(utt, char_emb, norm)
                history = None
                if variant == "M3":
                    history = ChatHistory(entries=past + [current])
                examples.append(
                    TrainingExample(
                        conversation_id=conv.id,
                        turn_index=turn.index,
                        phoneme_ids=inventory.encode(utt.phonemes),
                        mel=melspec.frames,
                        char_matrix=char_matrix,
                        char_alignment=list(utt.char_alignment),
                        history=history,
                        text=utt.text,
                    )
                )
            if current is not None:
                past.append(current)
    return examples


@dataclass
class TrainResult:
    model: ConversationalTTS
    checkpoint_path: Optional[Path]
    losses: list[dict] = field(default_factory=list)
    final_step: int = 0


def _batches_for_epoch(n_examples: int, batch_size: int, seed: int, epoch: int):
    order = np.random.default_rng((seed, epoch)).permutation(n_examples)
    return [order[i : i + batch_size] for i in range(0, n_examples, batch_size)]


def train(
    cfg: TrainConfig,
    model_config: ModelConfig,
    examples: Sequence[TrainingExample],
    *,
    out_dir=None,
    inventory: Optional[PhonemeInventory] = None,
    norm: Optional[NormalizationConfig] = None,
    speaker_labels=None,
    audio_config: Optional[dict] = None,
    init_checkpoint=None,
    log_path=None,
) -> TrainResult:
    """Run ``cfg.steps`` optimizer steps; deterministic given the seed.

    ``init_checkpoint`` may be a path or loaded checkpoint; its weights
    are copied in by name, leaving parameters it lacks (a larger
    variant's new modules) at their initialization, and the step counter
    resumes from its value. Checkpoints are written atomically to
    ``out_dir`` every ``checkpoint_every`` steps and at the end.
    """
    if not examples:
        raise InputError("training corpus is empty")
    if model_config.variant != cfg.model_variant:
        raise ConfigError(
            f"model variant {model_config.variant} != train config {cfg.model_variant}"
        )
    torch.manual_seed(cfg.seed)
    model = ConversationalTTS(model_config).to(cfg.dtype)
    start_step = 0
    if init_checkpoint is not None:
        ckpt = (
            init_checkpoint
            if not isinstance(init_checkpoint, (str, Path))
            else load_checkpoint(init_checkpoint)
        )
        apply_checkpoint(model, ckpt)
        start_step = ckpt.step
    model.train()
    rng = torch.Generator().manual_seed(cfg.seed + 1)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=cfg.lr_start, betas=(cfg.adam_beta1, cfg.adam_beta2)
    )
    out_dir = Path(out_dir) if out_dir is not None else None
    log_file = open(log_path, "a", encoding="utf-8") if log_path else None

    losses: list[dict] = []
    checkpoint_path = None

    def write_checkpoint(step):
        nonlocal checkpoint_path
        if out_dir is None:
            return
        checkpoint_path = out_dir / f"checkpoint_{step:07d}.zip"
        save_checkpoint(
            checkpoint_path, model, step=step, train_config=cfg,
            normalization=norm, inventory=inventory,
            speaker_labels=speaker_labels, audio_config=audio_config,
        )

    try:
        # skip ahead so a resumed run continues the same deterministic order
        epoch, cursor = 0, 0
        batches = _batches_for_epoch(len(examples), cfg.batch_size, cfg.seed, epoch)
        for _ in range(start_step):
            cursor += 1
            if cursor >= len(batches):
                epoch += 1
                cursor = 0
                batches = _batches_for_epoch(len(examples), cfg.batch_size, cfg.seed, epoch)
        for local_step in range(cfg.steps):
            global_step = start_step + local_step  # 0-based index of this update
            if cursor >= len(batches):
                epoch += 1
                cursor = 0
                batches = _batches_for_epoch(len(examples), cfg.batch_size, cfg.seed, epoch)
            batch_examples = [examples[i] for i in batches[cursor]]
            cursor += 1
            batch = collate(batch_examples, cfg.model_variant, dtype=cfg.dtype)
            lr = lr_at(global_step, cfg)
            for group in optimizer.param_groups:
                group["lr"] = lr
            t0 = time.monotonic()
            optimizer.zero_grad()
            before, after, stop_logits, _ = teacher_forced_forward(model, batch, rng)
            loss = compute_loss(
                before,
                after,
                batch.targets,
                stop_logits,
                batch.stop_targets,
                batch.frame_lengths,
                pos_weight=cfg.stop_pos_weight,
            )
            if not torch.isfinite(loss.total):
                raise TrainingDivergedError(global_step + 1)
            loss.total.backward()
            if cfg.grad_clip_norm is not None:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip_norm)
            optimizer.step()
            record = {
                "step": global_step + 1,
                "lr": lr,
                **loss.to_floats(),
                "wall_ms": (time.monotonic() - t0) * 1000.0,
            }
            losses.append(record)
            if log_file:
                log_file.write(json.dumps(record) + "\n")
            if cfg.checkpoint_every and (global_step + 1) % cfg.checkpoint_every == 0:
                write_checkpoint(global_step + 1)
        final_step = start_step + cfg.steps
        write_checkpoint(final_step)
    finally:
        if log_file:
            log_file.close()
    return TrainResult(
        model=model,
        checkpoint_path=checkpoint_path,
        losses=losses,
        final_step=start_step + cfg.steps,
    )
