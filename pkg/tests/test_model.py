import numpy as np
import pytest
import torch

from convtts.context_encoder import ChatHistory, UtteranceEmbedding
from convtts.errors import ConfigError, InputError
from convtts.model import (
    ConversationalTTS,
    ModelConfig,
    UtteranceInputs,
    default_model_config,
    desk_model_config,
)


def test_desk_preset_dimensions():
    cfg = desk_model_config(9, "M3", 32)
    assert cfg.encoder.memory_dim == 128
    assert cfg.aux.out_dim == 128 and cfg.context.out_dim == 128
    assert cfg.decoder.memory_dim == 128
    assert cfg.embedding_dim == 32


def test_config_round_trips_through_dict():
    cfg = desk_model_config(7, "M2", 16)
    clone = ModelConfig.from_dict(cfg.to_dict())
    assert clone == cfg


def test_variant_gates_required_inputs():
    torch.manual_seed(0)
    model = ConversationalTTS(desk_model_config(9, "M2", 32)).eval()
    with pytest.raises(InputError, match="char features"):
        model.encode_utterance(UtteranceInputs(phoneme_ids=torch.arange(5)))
    model3 = ConversationalTTS(desk_model_config(9, "M3", 32)).eval()
    with pytest.raises(InputError, match="history"):
        model3.encode_utterance(
            UtteranceInputs(
                phoneme_ids=torch.arange(5),
                char_matrix=torch.randn(2, 38),
                char_alignment=[(0, 2), (2, 4)],
            )
        )


def test_unknown_variant_rejected():
    with pytest.raises(ConfigError):
        desk_model_config(9, "M4", 32)


def test_full_scale_m3_forward_smoke():
    # the 512-dim default preset: one utterance through memory + two
    # decode steps, checking every interface dimension at real size
    torch.manual_seed(0)
    cfg = default_model_config(inventory_size=40, variant="M3", embedding_dim=768)
    assert cfg.encoder.memory_dim == 512
    assert cfg.aux.in_dim == 774 and cfg.context.in_dim == 769
    model = ConversationalTTS(cfg).eval()
    rng = np.random.default_rng(0)
    n_phonemes, n_chars = 10, 4
    history = ChatHistory(
        entries=[
            UtteranceEmbedding(rng.standard_normal(768), spk) for spk in (0, 1, 0)
        ]
    )
    inputs = UtteranceInputs(
        phoneme_ids=torch.randint(0, 40, (n_phonemes,)),
        char_matrix=torch.randn(n_chars, 774),
        char_alignment=[(0, 3), (3, 5), (5, 8), (8, 10)],
        history=history,
    )
    with torch.no_grad():
        memory = model.encode_utterance(inputs, rng=torch.Generator().manual_seed(1))
    assert memory.shape == (n_phonemes, 512)
    assert torch.isfinite(memory).all()
    mel, alignments, _ = model.synthesize(
        inputs, rng=torch.Generator().manual_seed(2), max_frames=2
    )
    assert mel.shape == (2, 80)
    assert alignments.shape == (2, n_phonemes)
    assert torch.isfinite(mel).all()
