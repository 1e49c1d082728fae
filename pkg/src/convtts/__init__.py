"""Conversation context-aware end-to-end TTS."""

from .attention import sma_step
from .aux_encoder import AuxEncoderConfig, AuxiliaryEncoder, combine_additive, encode_auxiliary
from .context_encoder import (
    ChatHistory,
    ContextEncoder,
    ContextEncoderConfig,
    UtteranceEmbedding,
    broadcast_combine,
    encode_context,
)
from .corpus import (
    Conversation,
    PhonemeInventory,
    SpontaneousAnnotation,
    Turn,
    Utterance,
    load_corpus,
    split_corpus,
    validate_conversation,
)
from .decoder import Decoder, DecoderConfig, Postnet, synthesize_utterance
from .encoder import EncoderConfig, PhonemeEncoder, encode_phonemes
from .features import (
    NormalizationConfig,
    StubEmbeddingProvider,
    compute_stat_features,
    stub_embedder,
    upsample_to_phonemes,
)
from .mel import MelConfig, MelSpectrogram, extract_mel
from .model import ConversationalTTS, ModelConfig, default_model_config, desk_model_config
from .training import TrainConfig, compute_loss, lr_at, teacher_forced_forward, train
from .vocoder import griffin_lim

__version__ = "0.1.0"
