"""Desk-scale voice and accent conversion: content encoder, f0 conditioning,
fusion and a GAN vocoder, with synthetic corpora and evaluation probes."""

from .config import RunConfig, load_config
from .dsp import DspParams, MelSpectrogram, Waveform, load_waveform, mel_spectrogram, save_waveform
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    NumericError,
    VCError,
)
from .pitch import F0Contour, PitchParams, estimate_f0, shift_scale_f0

__version__ = "0.1.0"

__all__ = [
    "CheckpointError", "ConfigError", "DataError", "DspParams", "F0Contour", "MelSpectrogram",
    "NumericError", "PitchParams", "RunConfig", "VCError", "Waveform", "estimate_f0", "load_config",
    "load_waveform", "mel_spectrogram", "save_waveform", "shift_scale_f0",
]
