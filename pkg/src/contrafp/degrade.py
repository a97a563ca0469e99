"""Audio degradation menu used for training views and evaluation attacks.

Eight degradations, each independently selected with probability 0.3 and
applied in a fixed order: additive white noise, pitch shift, speed change,
tempo change, highpass, lowpass, echo, and (test-time only) a 10-band
equalizer. Pitch and tempo ride on a phase vocoder; speed and the second
leg of pitch ride on the windowed-sinc resampler.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

import numpy as np
from scipy.signal import lfilter

from .audio import AudioBuffer, TARGET_RATE, resample
from .errors import InputError
from .seeding import rng_from

# Menu parameters: selection probability, parameter ranges, fixed settings.
SELECT_PROB = 0.3
NOISE_RANGE = (0.0, 0.08)        # uniform-noise peak amplitude
PITCH_RANGE = (-5.0, 5.0)        # semitones
SPEED_RANGE = (0.8, 1.2)
TEMPO_RANGE = (0.8, 1.2)
HIGHPASS_HZ = 2000.0
LOWPASS_HZ = 300.0
ECHO_TAPS = ((0.8, 0.88), (60.0, 0.4))  # (delay ms, decay), applied sequentially

# Phase vocoder analysis settings (independent of the feature front end).
_PV_FRAME = 1024
_PV_HOP = 256

# Equalizer: octave bands with lower edges at 31.25 * 2^k Hz, k = 0..9;
# frequencies below the first edge fall into band 0. Gains alternate
# +6 dB / -6 dB starting with +6 on band 0.
EQ_BASE_HZ = 31.25
EQ_BANDS = 10
EQ_GAIN_DB = 6.0


@dataclass(frozen=True)
class DegradationSpec:
    """Which degradations to apply and with what parameters.

    A None field (or eq=False) means that degradation is absent. Present
    parameters must lie in the menu ranges.
    """

    noise_intensity: Optional[float] = None
    pitch_semitones: Optional[float] = None
    speed_factor: Optional[float] = None
    tempo_factor: Optional[float] = None
    highpass_hz: Optional[float] = None
    lowpass_hz: Optional[float] = None
    echo: Optional[tuple[tuple[float, float], ...]] = None
    eq: bool = False

    def __post_init__(self):
        def check(name, value, lo, hi):
            if value is not None and not (lo <= value <= hi):
                raise InputError(f"{name}={value} outside [{lo}, {hi}]")

        check("noise_intensity", self.noise_intensity, *NOISE_RANGE)
        check("pitch_semitones", self.pitch_semitones, *PITCH_RANGE)
        check("speed_factor", self.speed_factor, *SPEED_RANGE)
        check("tempo_factor", self.tempo_factor, *TEMPO_RANGE)
        if self.highpass_hz is not None and not (0.0 < self.highpass_hz < TARGET_RATE / 2):
            raise InputError(f"highpass_hz={self.highpass_hz} outside (0, Nyquist)")
        if self.lowpass_hz is not None and not (0.0 < self.lowpass_hz < TARGET_RATE / 2):
            raise InputError(f"lowpass_hz={self.lowpass_hz} outside (0, Nyquist)")
        if self.echo is not None:
            echo = tuple((float(d), float(g)) for d, g in self.echo)
            for delay_ms, decay in echo:
                if delay_ms < 0:
                    raise InputError(f"echo delay {delay_ms} ms is negative")
                if not (0.0 <= decay <= 1.0):
                    raise InputError(f"echo decay {decay} outside [0, 1]")
            object.__setattr__(self, "echo", echo)

    def active(self) -> tuple[str, ...]:
        """Names of the degradations present, in application order."""
        names = []
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "eq":
                if value:
                    names.append("eq")
            elif value is not None:
                names.append(f.name.split("_")[0])
        return tuple(names)

    def to_line(self) -> str:
        """One-line key=value form for logs."""
        parts = []
        for key, value in (
            ("noise", self.noise_intensity),
            ("pitch", self.pitch_semitones),
            ("speed", self.speed_factor),
            ("tempo", self.tempo_factor),
            ("highpass", self.highpass_hz),
            ("lowpass", self.lowpass_hz),
        ):
            if value is not None:
                parts.append(f"{key}={value:.6g}")
        if self.echo is not None:
            parts.append("echo=" + ";".join(f"{d:g}:{g:g}" for d, g in self.echo))
        if self.eq:
            parts.append("eq=1")
        return " ".join(parts) if parts else "none"

    @classmethod
    def from_line(cls, line: str) -> "DegradationSpec":
        """Parse the to_line format back into a spec."""
        line = line.strip()
        if line in ("", "none"):
            return cls()
        kwargs = {}
        for token in line.split():
            if "=" not in token:
                raise InputError(f"bad degradation token {token!r}")
            key, _, value = token.partition("=")
            if key == "noise":
                kwargs["noise_intensity"] = float(value)
            elif key == "pitch":
                kwargs["pitch_semitones"] = float(value)
            elif key == "speed":
                kwargs["speed_factor"] = float(value)
            elif key == "tempo":
                kwargs["tempo_factor"] = float(value)
            elif key == "highpass":
                kwargs["highpass_hz"] = float(value)
            elif key == "lowpass":
                kwargs["lowpass_hz"] = float(value)
            elif key == "echo":
                kwargs["echo"] = tuple(
                    (float(d), float(g)) for d, g in (pair.split(":") for pair in value.split(";"))
                )
            elif key == "eq":
                kwargs["eq"] = value not in ("0", "", "false")
            else:
                raise InputError(f"unknown degradation key {key!r}")
        return cls(**kwargs)


def sample_spec(rng_seed: int, include_test_only: bool = False) -> DegradationSpec:
    """Draw a random DegradationSpec; each entry enters with probability 0.3.

    The equalizer is a held-out test attack and is only eligible when
    include_test_only is set. Deterministic per seed: draws happen in menu
    order, parameters drawn only for selected entries.
    """
    rng = rng_from(rng_seed)
    kwargs = {}
    if rng.random() < SELECT_PROB:
        kwargs["noise_intensity"] = rng.uniform(*NOISE_RANGE)
    if rng.random() < SELECT_PROB:
        kwargs["pitch_semitones"] = rng.uniform(*PITCH_RANGE)
    if rng.random() < SELECT_PROB:
        kwargs["speed_factor"] = rng.uniform(*SPEED_RANGE)
    if rng.random() < SELECT_PROB:
        kwargs["tempo_factor"] = rng.uniform(*TEMPO_RANGE)
    if rng.random() < SELECT_PROB:
        kwargs["highpass_hz"] = HIGHPASS_HZ
    if rng.random() < SELECT_PROB:
        kwargs["lowpass_hz"] = LOWPASS_HZ
    if rng.random() < SELECT_PROB:
        kwargs["echo"] = ECHO_TAPS
    if include_test_only and rng.random() < SELECT_PROB:
        kwargs["eq"] = True
    return DegradationSpec(**kwargs)


def _require_16k(a: AudioBuffer, op: str) -> None:
    if a.sample_rate != TARGET_RATE:
        raise InputError(f"{op} wants {TARGET_RATE} Hz input, got {a.sample_rate}")


def _princarg(phase: np.ndarray) -> np.ndarray:
    return (phase + np.pi) % (2.0 * np.pi) - np.pi


def _pv_stft(x: np.ndarray) -> np.ndarray:
    pad = _PV_FRAME // 2
    xp = np.concatenate([np.zeros(pad, np.float32), x, np.zeros(pad + _PV_FRAME, np.float32)])
    n_frames = (len(xp) - _PV_FRAME) // _PV_HOP + 1
    starts = np.arange(n_frames) * _PV_HOP
    frames = xp[starts[:, None] + np.arange(_PV_FRAME)[None, :]]
    window = np.hanning(_PV_FRAME).astype(np.float32)
    return np.fft.rfft(frames * window, axis=1).T  # (bins, frames)


def _pv_istft(spec: np.ndarray, n_out: int) -> np.ndarray:
    window = np.hanning(_PV_FRAME).astype(np.float32)
    frames = np.fft.irfft(spec.T, n=_PV_FRAME, axis=1).astype(np.float32) * window
    n_frames = frames.shape[0]
    total = (n_frames - 1) * _PV_HOP + _PV_FRAME
    out = np.zeros(total, dtype=np.float32)
    wsum = np.zeros(total, dtype=np.float32)
    wsq = window * window
    for j in range(n_frames):
        at = j * _PV_HOP
        out[at:at + _PV_FRAME] += frames[j]
        wsum[at:at + _PV_FRAME] += wsq
    out /= np.maximum(wsum, 1e-8)
    pad = _PV_FRAME // 2
    out = out[pad:pad + n_out]
    if len(out) < n_out:
        out = np.concatenate([out, np.zeros(n_out - len(out), np.float32)])
    return out


def _phase_vocoder(x: np.ndarray, rate: float) -> np.ndarray:
    """Time-scale x by 1/rate (rate > 1 shortens) with identity phase locking.

    Magnitudes are linearly interpolated at fractional analysis steps.
    Per-bin phases advance by the measured instantaneous frequency; bins
    are then re-phased relative to the nearest spectral peak of their
    frame so harmonics stay coherent.
    """
    n_out = int(round(len(x) / rate))
    if n_out == 0:
        return np.zeros(0, dtype=np.float32)
    spec = _pv_stft(x)
    n_bins, n_frames = spec.shape
    spec = np.concatenate([spec, np.zeros((n_bins, 1), spec.dtype)], axis=1)

    steps = np.arange(0, n_frames - 1, rate)
    lo = np.floor(steps).astype(np.int64)
    frac = (steps - lo).astype(np.float32)

    mag = np.abs(spec)
    phase = np.angle(spec)
    out_mag = mag[:, lo] * (1.0 - frac)[None, :] + mag[:, lo + 1] * frac[None, :]

    # per-bin phase advance between the bracketing analysis frames
    omega = (2.0 * np.pi * _PV_HOP / _PV_FRAME) * np.arange(n_bins)
    advance = omega[:, None] + _princarg(phase[:, lo + 1] - phase[:, lo] - omega[:, None])
    acc = np.empty_like(advance)
    acc[:, 0] = phase[:, lo[0]]
    np.cumsum(advance[:, :-1], axis=1, out=acc[:, 1:])
    acc[:, 1:] += phase[:, lo[0]][:, None]

    # identity phase locking: tie each bin's phase to its nearest peak
    is_peak = np.zeros(out_mag.shape, dtype=bool)
    interior = (out_mag[1:-1] >= out_mag[:-2]) & (out_mag[1:-1] > out_mag[2:])
    is_peak[1:-1] = interior & (out_mag[1:-1] > 1e-10)
    bins = np.arange(n_bins, dtype=np.int64)[:, None]
    below = np.where(is_peak, bins, -n_bins)
    below = np.maximum.accumulate(below, axis=0)
    above = np.where(is_peak, bins, 3 * n_bins)
    above = np.minimum.accumulate(above[::-1], axis=0)[::-1]
    nearest = np.where(bins - below <= above - bins, below, above)
    nearest = np.clip(nearest, 0, n_bins - 1)
    has_peak = is_peak.any(axis=0)
    nearest[:, ~has_peak] = bins[:, 0:1]

    frame_phase = phase[:, lo]
    cols = np.arange(len(lo))[None, :]
    locked = acc[nearest, cols] + (frame_phase - frame_phase[nearest, cols])
    locked[is_peak] = acc[is_peak]

    out_spec = np.empty(out_mag.shape, dtype=np.complex64)
    out_spec.real = out_mag * np.cos(locked)
    out_spec.imag = out_mag * np.sin(locked)
    return _pv_istft(out_spec, n_out)


def time_stretch(a: AudioBuffer, tempo_factor: float) -> AudioBuffer:
    """Change duration by 1/tempo_factor at constant pitch."""
    _require_16k(a, "time_stretch")
    if not (0.1 <= tempo_factor <= 10.0):
        raise InputError(f"tempo_factor={tempo_factor} out of supported range")
    if tempo_factor == 1.0:
        return a
    return AudioBuffer(_phase_vocoder(a.samples, tempo_factor), TARGET_RATE)


def speed_change(a: AudioBuffer, speed_factor: float) -> AudioBuffer:
    """Play back speed_factor times faster: duration /f and pitch *f."""
    _require_16k(a, "speed_change")
    if not (0.1 <= speed_factor <= 10.0):
        raise InputError(f"speed_factor={speed_factor} out of supported range")
    if speed_factor == 1.0:
        return a
    y = resample(a.samples, TARGET_RATE, TARGET_RATE / speed_factor)
    return AudioBuffer(y, TARGET_RATE)


def pitch_shift(a: AudioBuffer, semitones: float) -> AudioBuffer:
    """Shift pitch by the given semitones at (approximately) constant duration.

    Time-stretch to 2^(s/12) times the length, then resample back down,
    which scales pitch by 2^(s/12).
    """
    _require_16k(a, "pitch_shift")
    if semitones == 0.0:
        return a
    ratio = 2.0 ** (semitones / 12.0)
    stretched = time_stretch(a, 1.0 / ratio)
    return speed_change(stretched, ratio)


def biquad_filter(a: AudioBuffer, mode: str, cutoff_hz: float) -> AudioBuffer:
    """Second-order Butterworth highpass or lowpass via bilinear transform."""
    _require_16k(a, "biquad_filter")
    if mode not in ("highpass", "lowpass"):
        raise InputError(f"biquad mode must be 'highpass' or 'lowpass', got {mode!r}")
    if not (0.0 < cutoff_hz < TARGET_RATE / 2):
        raise InputError(f"cutoff {cutoff_hz} Hz outside (0, Nyquist)")
    k = np.tan(np.pi * cutoff_hz / TARGET_RATE)
    q = 1.0 / np.sqrt(2.0)
    norm = 1.0 / (k * k + k / q + 1.0)
    if mode == "lowpass":
        b = np.array([k * k, 2 * k * k, k * k]) * norm
    else:
        b = np.array([1.0, -2.0, 1.0]) * norm
    a_coef = np.array([1.0, 2.0 * (k * k - 1.0) * norm, (k * k - k / q + 1.0) * norm])
    y = lfilter(b, a_coef, a.samples.astype(np.float64)).astype(np.float32)
    return AudioBuffer(y, TARGET_RATE)


def add_echo(a: AudioBuffer, taps=ECHO_TAPS) -> AudioBuffer:
    """Feed-forward echo taps applied sequentially, then clamped to [-1, 1].

    Each tap adds a delayed, scaled copy of its own input, so the second
    tap echoes the first tap's output.
    """
    _require_16k(a, "add_echo")
    taps = DegradationSpec(echo=tuple(taps)).echo  # reuse the validation
    y = a.samples.astype(np.float32).copy()
    for delay_ms, decay in taps:
        d = int(round(delay_ms * TARGET_RATE / 1000.0))
        if d == 0:
            y = y * (1.0 + decay)
        elif d < len(y):
            y[d:] += np.float32(decay) * y[:len(y) - d]
    return AudioBuffer(np.clip(y, -1.0, 1.0), TARGET_RATE)


def _eq_gains(freqs: np.ndarray) -> np.ndarray:
    band = np.floor(np.log2(np.maximum(freqs, 1e-6) / EQ_BASE_HZ))
    band = np.clip(band, 0, EQ_BANDS - 1).astype(np.int64)
    gain_db = np.where(band % 2 == 0, EQ_GAIN_DB, -EQ_GAIN_DB)
    return 10.0 ** (gain_db / 20.0)


def apply_eq(a: AudioBuffer) -> AudioBuffer:
    """Fixed 10-band octave equalizer with alternating +6/-6 dB gains.

    Applied in the frequency domain over the whole buffer: each rfft bin
    is scaled by its band's gain.
    """
    _require_16k(a, "apply_eq")
    spectrum = np.fft.rfft(a.samples.astype(np.float64))
    spectrum *= _eq_gains(np.fft.rfftfreq(len(a), d=1.0 / TARGET_RATE))
    return AudioBuffer(np.fft.irfft(spectrum, len(a)).astype(np.float32), TARGET_RATE)


def apply(a: AudioBuffer, spec: DegradationSpec, rng_seed: int) -> AudioBuffer:
    """Apply the present degradations in menu order and clamp to [-1, 1].

    Only the noise term consumes randomness; everything else is fully
    determined by the spec.
    """
    _require_16k(a, "apply")
    out = a
    if spec.noise_intensity is not None:
        rng = rng_from(rng_seed)
        noise = rng.uniform(-spec.noise_intensity, spec.noise_intensity, len(out))
        out = AudioBuffer(out.samples + noise.astype(np.float32), TARGET_RATE)
    if spec.pitch_semitones is not None:
        out = pitch_shift(out, spec.pitch_semitones)
    if spec.speed_factor is not None:
        out = speed_change(out, spec.speed_factor)
    if spec.tempo_factor is not None:
        out = time_stretch(out, spec.tempo_factor)
    if spec.highpass_hz is not None:
        out = biquad_filter(out, "highpass", spec.highpass_hz)
    if spec.lowpass_hz is not None:
        out = biquad_filter(out, "lowpass", spec.lowpass_hz)
    if spec.echo is not None:
        out = add_echo(out, spec.echo)
    if spec.eq:
        out = apply_eq(out)
    return AudioBuffer(np.clip(out.samples, -1.0, 1.0), TARGET_RATE)
