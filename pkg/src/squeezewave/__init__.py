"""CPU inference engine and cost analyzer for WaveGlow/SqueezeWave vocoders."""

from .analyzer import CostReport, LayerCost, analyze, compare, count_params
from .audio import Waveform, mel_spectrogram, read_wav, write_wav
from .errors import (
    ConfigError,
    FormatError,
    InvertibilityError,
    SchemaError,
    ShapeError,
    VocoderError,
)
from .flow import SQUEEZEWAVE, WAVEGLOW
from .model import (
    PRESETS,
    LatentVector,
    Model,
    ModelConfig,
    forward,
    group_audio,
    infer,
    nll,
    prepare_conditioning,
    random_model,
    ungroup_audio,
)
from .storage import load_mel, load_model, save_mel, save_model

__all__ = [
    "CostReport", "LayerCost", "analyze", "compare", "count_params",
    "Waveform", "mel_spectrogram", "read_wav", "write_wav",
    "ConfigError", "FormatError", "InvertibilityError", "SchemaError",
    "ShapeError", "VocoderError",
    "SQUEEZEWAVE", "WAVEGLOW",
    "PRESETS", "LatentVector", "Model", "ModelConfig",
    "forward", "group_audio", "infer", "nll", "prepare_conditioning",
    "random_model", "ungroup_audio",
    "load_mel", "load_model", "save_mel", "save_model",
]
