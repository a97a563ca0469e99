"""Log-Mel spectrogram front end.

A 2.5 s snippet at 16 kHz (40,000 samples) maps to a 128 x 200 log-Mel
patch: Hann frames of 1024 samples at hop 200, power spectrum, 128
triangular Mel filters from 0 to 8 kHz, natural log with a 1e-10 floor.
The hop is chosen so the snippet length divides evenly into frames; the
signal is end-padded by (frame_len - hop) zeros so every hop multiple
below the signal length starts a frame.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .audio import AudioBuffer, TARGET_RATE
from .errors import InputError

FRAME_LEN = 1024
HOP = 200
N_MELS = 128
FMIN_HZ = 0.0
FMAX_HZ = 8000.0
LOG_FLOOR = 1e-10
SNIPPET_SECONDS = 2.5
SNIPPET_SAMPLES = int(SNIPPET_SECONDS * TARGET_RATE)  # 40000 -> 200 frames


@dataclass(frozen=True)
class MelSpectrogram:
    """Log-Mel patch, shape (n_mels, n_frames), float32."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 2:
            raise InputError(f"MelSpectrogram wants a 2-D array, got shape {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def n_mels(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]

    def dump_raw(self, path) -> None:
        """Raw little-endian float32 dump, row-major."""
        Path(path).write_bytes(self.values.astype("<f4").tobytes())


def stft(a: AudioBuffer, frame_len: int = FRAME_LEN, hop: int = HOP) -> np.ndarray:
    """One-sided STFT with Hann window, (frame_len // 2 + 1, n_frames) complex.

    Frames start at multiples of hop; the input is end-padded with
    frame_len - hop zeros so a 40,000-sample snippet yields exactly 200
    frames at the default hop.
    """
    x = a.samples
    if len(x) < frame_len:
        raise InputError(f"input of {len(x)} samples is shorter than one {frame_len}-sample frame")
    padded = np.concatenate([x, np.zeros(frame_len - hop, dtype=np.float32)])
    n_frames = (len(padded) - frame_len) // hop + 1
    starts = np.arange(n_frames) * hop
    frames = padded[starts[:, None] + np.arange(frame_len)[None, :]]
    window = np.hanning(frame_len).astype(np.float32)
    return np.fft.rfft(frames * window, axis=1).T


def _hz_to_mel(f):
    """Piecewise mel scale: linear to 1 kHz, logarithmic above."""
    f = np.asarray(f, dtype=np.float64)
    log_step = np.log(6.4) / 27.0
    return np.where(f < 1000.0, 3.0 * f / 200.0, 15.0 + np.log(np.maximum(f, 1000.0) / 1000.0) / log_step)


def _mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    log_step = np.log(6.4) / 27.0
    return np.where(m < 15.0, 200.0 * m / 3.0, 1000.0 * np.exp(log_step * (m - 15.0)))


@lru_cache(maxsize=4)
def mel_filterbank(n_mels: int = N_MELS, n_fft: int = FRAME_LEN,
                   sample_rate: int = TARGET_RATE,
                   fmin: float = FMIN_HZ, fmax: float = FMAX_HZ) -> np.ndarray:
    """Triangular Mel filterbank, (n_mels, n_fft // 2 + 1) float32.

    Unit-peak triangles with edges equally spaced on the mel scale.
    Adjacent filters overlap at their centers, so every FFT bin strictly
    inside (fmin, fmax) carries nonzero total weight.
    """
    bin_hz = np.arange(n_fft // 2 + 1, dtype=np.float64) * sample_rate / n_fft
    edges = _mel_to_hz(np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2))
    lo, center, hi = edges[:-2], edges[1:-1], edges[2:]
    up = (bin_hz[None, :] - lo[:, None]) / np.maximum(center - lo, 1e-12)[:, None]
    down = (hi[:, None] - bin_hz[None, :]) / np.maximum(hi - center, 1e-12)[:, None]
    weights = np.clip(np.minimum(up, down), 0.0, None)
    return weights.astype(np.float32)


def mel_center_freqs(n_mels: int = N_MELS, fmin: float = FMIN_HZ, fmax: float = FMAX_HZ) -> np.ndarray:
    """Center frequency in Hz of each Mel band."""
    edges = _mel_to_hz(np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2))
    return edges[1:-1]


def mel_spectrogram(a: AudioBuffer) -> MelSpectrogram:
    """Log-Mel patch of one 2.5 s snippet; output is exactly 128 x 200."""
    if a.sample_rate != TARGET_RATE:
        raise InputError(f"mel front end wants {TARGET_RATE} Hz input, got {a.sample_rate}")
    if len(a) != SNIPPET_SAMPLES:
        raise InputError(f"mel front end wants exactly {SNIPPET_SAMPLES} samples, got {len(a)}")
    spectrum = stft(a)
    power = (spectrum.real ** 2 + spectrum.imag ** 2).astype(np.float32)
    mel_power = mel_filterbank() @ power
    return MelSpectrogram(np.log(np.maximum(mel_power, LOG_FLOOR)))
