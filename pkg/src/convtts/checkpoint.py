"""Single-file checkpoints: named float32 arrays plus a JSON manifest.

The archive is a zip holding ``manifest.json`` (step counter, variant,
model/train configs, normalization, inventory, and per-array shapes) and
one little-endian float32 payload per state tensor under ``arrays/``.
Writes go to a temp file and rename into place; float32 round trips are
bit-exact.
"""

from __future__ import annotations

import json
import os
import tempfile
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .errors import CheckpointError

FORMAT_VERSION = 1


@dataclass
class CheckpointData:
    step: int
    model_config: dict
    train_config: Optional[dict]
    normalization: Optional[dict]
    inventory: Optional[dict]
    arrays: dict[str, np.ndarray]
    speaker_labels: Optional[list[str]] = None
    audio_config: Optional[dict] = None

    @property
    def variant(self) -> str:
        return self.model_config["variant"]


def _state_arrays(model: torch.nn.Module) -> dict[str, np.ndarray]:
    return {
        name: tensor.detach().cpu().to(torch.float32).numpy()
        for name, tensor in model.state_dict().items()
    }


def save_checkpoint(
    path,
    model,
    *,
    step: int,
    train_config=None,
    normalization=None,
    inventory=None,
    speaker_labels=None,
    audio_config=None,
):
    """Atomically write the model's full state plus its configs."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = _state_arrays(model)
    manifest = {
        "format_version": FORMAT_VERSION,
        "step": int(step),
        "variant": model.config.variant,
        "model_config": model.config.to_dict(),
        "train_config": train_config.to_dict() if train_config is not None else None,
        "normalization": normalization.to_dict() if normalization is not None else None,
        "inventory": inventory.to_dict() if inventory is not None else None,
        "speaker_labels": list(speaker_labels) if speaker_labels is not None else None,
        "audio_config": dict(audio_config) if audio_config is not None else None,
        "arrays": {name: list(a.shape) for name, a in arrays.items()},
    }
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    os.close(fd)
    try:
        with zipfile.ZipFile(tmp_name, "w", compression=zipfile.ZIP_DEFLATED) as zf:
            zf.writestr("manifest.json", json.dumps(manifest, indent=1))
            for name, array in arrays.items():
                payload = np.ascontiguousarray(array, dtype="<f4").tobytes()
                zf.writestr(f"arrays/{name}.f32", payload)
        os.replace(tmp_name, path)
    finally:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)


def load_checkpoint(path) -> CheckpointData:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            arrays = {}
            for name, shape in manifest["arrays"].items():
                raw = zf.read(f"arrays/{name}.f32")
                expected = int(np.prod(shape)) * 4
                if len(raw) != expected:
                    raise CheckpointError(
                        f"{path}: array {name} holds {len(raw)} bytes, expected {expected}"
                    )
                arrays[name] = (
                    np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
                )
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"malformed checkpoint {path}: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported format version {manifest.get('format_version')}"
        )
    return CheckpointData(
        step=int(manifest["step"]),
        model_config=manifest["model_config"],
        train_config=manifest.get("train_config"),
        normalization=manifest.get("normalization"),
        inventory=manifest.get("inventory"),
        arrays=arrays,
        speaker_labels=manifest.get("speaker_labels"),
        audio_config=manifest.get("audio_config"),
    )


def apply_checkpoint(model, ckpt: CheckpointData) -> list[str]:
    """Copy checkpoint arrays into the model by state-dict name.

    Parameters the checkpoint lacks (a larger variant's new modules) keep
    their initialization; checkpoint arrays unknown to the model mean a
    variant mismatch and raise. Returns the names left at initialization.
    """
    state = model.state_dict()
    for name, array in ckpt.arrays.items():
        if name not in state:
            raise CheckpointError(
                f"checkpoint array {name!r} has no slot in variant "
                f"{model.config.variant}; was it written by a larger variant?"
            )
        target = state[name]
        if tuple(target.shape) != array.shape:
            raise CheckpointError(
                f"shape mismatch for {name}: checkpoint {array.shape}, "
                f"model {tuple(target.shape)}"
            )
        with torch.no_grad():
            target.copy_(torch.as_tensor(array).to(target.dtype))
    return sorted(set(state) - set(ckpt.arrays))


def build_model_from_checkpoint(ckpt: CheckpointData, dtype=torch.float32):
    """Instantiate the checkpoint's variant and load its weights."""
    from .model import ConversationalTTS, ModelConfig

    model = ConversationalTTS(ModelConfig.from_dict(ckpt.model_config)).to(dtype)
    missing = apply_checkpoint(model, ckpt)
    if missing:
        raise CheckpointError(
            f"checkpoint lacks arrays for: {missing[:3]}{'...' if len(missing) > 3 else ''}"
        )
    model.eval()
    return model
