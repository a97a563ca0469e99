"""Degradation-robust audio fingerprinting with a contrastively trained encoder."""

from .audio import AudioBuffer, load_wav, resample, save_wav, synth_corpus, synth_track, to_mono_16k
from .degrade import DegradationSpec, apply, sample_spec
from .errors import (
    ConfigError,
    DegenerateEmbeddingError,
    FormatError,
    InputError,
    StateError,
    UnsupportedFormatError,
)
from .features import MelSpectrogram, mel_spectrogram
from .fingerprint import Fingerprint, SubFingerprint, extract, load_fingerprint, save_fingerprint
from .matchdb import FingerprintDb, MatchResult, TrackEntry
from .moco import DictionaryQueue, TrainHyper, info_nce, momentum_update, train
from .nn import EMBED_DIM, Encoder, EncoderConfig, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "AudioBuffer",
    "ConfigError",
    "DegenerateEmbeddingError",
    "DegradationSpec",
    "DictionaryQueue",
    "EMBED_DIM",
    "Encoder",
    "EncoderConfig",
    "Fingerprint",
    "FingerprintDb",
    "FormatError",
    "InputError",
    "MatchResult",
    "MelSpectrogram",
    "StateError",
    "SubFingerprint",
    "TrackEntry",
    "TrainHyper",
    "UnsupportedFormatError",
    "apply",
    "extract",
    "info_nce",
    "load_checkpoint",
    "load_fingerprint",
    "load_wav",
    "mel_spectrogram",
    "momentum_update",
    "resample",
    "sample_spec",
    "save_checkpoint",
    "save_fingerprint",
    "save_wav",
    "synth_corpus",
    "synth_track",
    "to_mono_16k",
    "train",
]
