"""Masked acoustic modeling toolkit: features, alterations, a numpy transformer encoder,
pretraining and fine-tuning for utterance-level speech classification."""

__version__ = "0.1.0"

from .dsp import AudioClip, DspConfig, FeatureKind, FeatureMatrix, mel_spectrogram, mfcc, resample
from .masking import (
    ChannelMaskConfig,
    MaskingConfig,
    NoiseMaskConfig,
    TimeMaskConfig,
    channel_alteration,
    compose_alterations,
    noise_alteration,
    time_alteration,
)
from .model import EncoderState, ModelConfig, encode, init_state
from .training import FinetuneConfig, PretrainConfig, Technique, finetune, pretrain

__all__ = [
    "AudioClip",
    "DspConfig",
    "FeatureKind",
    "FeatureMatrix",
    "mel_spectrogram",
    "mfcc",
    "resample",
    "ChannelMaskConfig",
    "MaskingConfig",
    "NoiseMaskConfig",
    "TimeMaskConfig",
    "channel_alteration",
    "compose_alterations",
    "noise_alteration",
    "time_alteration",
    "EncoderState",
    "ModelConfig",
    "encode",
    "init_state",
    "FinetuneConfig",
    "PretrainConfig",
    "Technique",
    "finetune",
    "pretrain",
]
