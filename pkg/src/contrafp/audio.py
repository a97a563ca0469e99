"""Audio ingestion, resampling, and synthetic track generation.

Everything downstream operates on AudioBuffer: mono float32 samples in
[-1, 1] plus a sample rate. WAV I/O is implemented directly over the RIFF
container so unsupported encodings fail with precise, typed errors instead
of silently decoding garbage.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError, UnsupportedFormatError
from .seeding import derive_seed, rng_from

TARGET_RATE = 16000

# Windowed-sinc resampler. The kernel spans RESAMPLE_TAPS samples at the
# lower of the two rates; 0.45 * min(rate_in, rate_out) is the passband
# edge, with the Kaiser transition band placed entirely above it so tones
# below the edge come through flat.
RESAMPLE_TAPS = 32
KAISER_BETA = 6.0
_PHASE_STEPS = 1024  # fractional-delay resolution of the branch table


@dataclass(frozen=True)
class AudioBuffer:
    """Mono audio: float32 samples (nominally in [-1, 1]) at a sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float32)
        if samples.ndim != 1:
            raise InputError(f"AudioBuffer wants 1-D samples, got shape {samples.shape}")
        if self.sample_rate <= 0:
            raise InputError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.isfinite(samples).all():
            raise InputError("AudioBuffer samples contain non-finite values")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        """Length in seconds."""
        return len(self.samples) / self.sample_rate


def _read_exact(data: bytes, offset: int, n: int, what: str) -> bytes:
    if offset + n > len(data):
        raise FormatError(f"truncated WAV: expected {what}", offset=offset)
    return data[offset:offset + n]


def load_wav(path) -> AudioBuffer:
    """Read a PCM or IEEE-float WAV file and mix it down to mono.

    Supports 8/16/24-bit integer PCM and 32-bit float, 1 or 2 channels,
    at the file's native rate. Stereo is averaged into mono. Raises
    FormatError for malformed containers and UnsupportedFormatError for
    encodings outside that set.
    """
    data = Path(path).read_bytes()
    if len(data) < 12 or data[0:4] != b"RIFF":
        raise FormatError("not a RIFF file", offset=0)
    if data[8:12] != b"WAVE":
        raise FormatError("RIFF file is not WAVE", offset=8)

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4:pos + 8])
        body_at = pos + 8
        if cid == b"fmt ":
            body = _read_exact(data, body_at, min(size, 16), "fmt chunk body")
            if size < 16:
                raise FormatError("fmt chunk too small", offset=pos)
            tag, channels, rate, _, _, bits = struct.unpack("<HHIIHH", body)
            if tag == 0xFFFE:
                # WAVE_FORMAT_EXTENSIBLE: the real codec is the first two
                # bytes of the SubFormat GUID at offset 24 of the body.
                sub = _read_exact(data, body_at + 24, 2, "extensible subformat")
                (tag,) = struct.unpack("<H", sub)
            fmt = (tag, channels, rate, bits)
        elif cid == b"data":
            payload = _read_exact(data, body_at, size, "data chunk body")
        pos = body_at + size + (size & 1)  # chunks are word-aligned

    if fmt is None:
        raise FormatError("WAV has no fmt chunk", offset=len(data))
    if payload is None:
        raise FormatError("WAV has no data chunk", offset=len(data))

    tag, channels, rate, bits = fmt
    if channels not in (1, 2):
        raise UnsupportedFormatError(f"unsupported channel count {channels}")
    if rate <= 0:
        raise FormatError(f"invalid sample rate {rate}")

    if tag == 1 and bits == 8:
        raw = np.frombuffer(payload, dtype=np.uint8)
        x = (raw.astype(np.float32) - 128.0) / 128.0
    elif tag == 1 and bits == 16:
        raw = np.frombuffer(payload[:len(payload) // 2 * 2], dtype="<i2")
        x = raw.astype(np.float32) / 32768.0
    elif tag == 1 and bits == 24:
        raw = np.frombuffer(payload[:len(payload) // 3 * 3], dtype=np.uint8)
        b = raw.reshape(-1, 3).astype(np.int32)
        val = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        val = (val ^ 0x800000) - 0x800000  # sign-extend 24 -> 32 bits
        x = val.astype(np.float32) / float(1 << 23)
    elif tag == 3 and bits == 32:
        x = np.frombuffer(payload[:len(payload) // 4 * 4], dtype="<f4").astype(np.float32)
    else:
        raise UnsupportedFormatError(f"unsupported WAV encoding: format tag {tag}, {bits}-bit")

    if channels == 2:
        x = x[:len(x) // 2 * 2].reshape(-1, 2)
        x = x.mean(axis=1, dtype=np.float64).astype(np.float32)
    if not np.isfinite(x).all():
        raise FormatError("WAV payload contains non-finite float samples")
    return AudioBuffer(x, int(rate))


def save_wav(path, a: AudioBuffer) -> None:
    """Write an AudioBuffer as 16-bit PCM mono, clipping to [-1, 1]."""
    x = np.clip(a.samples, -1.0, 1.0)
    ints = np.round(x.astype(np.float64) * 32767.0).astype("<i2")
    body = ints.tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(body), b"WAVE",
        b"fmt ", 16, 1, 1, a.sample_rate, a.sample_rate * 2, 2, 16,
        b"data", len(body),
    )
    Path(path).write_bytes(header + body)


@lru_cache(maxsize=8)
def _window_grid(support: int) -> tuple[np.ndarray, np.ndarray]:
    """Fractional-delay grid and Kaiser window for one tap count.

    Depends only on the (small, integer) support, so it is cached; the
    ratio-dependent sinc part of the table is cheap by comparison.
    """
    half = support // 2
    frac = np.arange(_PHASE_STEPS + 1, dtype=np.float64) / _PHASE_STEPS
    offs = np.arange(-half + 1, half + 1, dtype=np.float64)
    u = frac[:, None] - offs[None, :]
    win_arg = np.clip(1.0 - (u / half) ** 2, 0.0, None)
    window = np.i0(KAISER_BETA * np.sqrt(win_arg)) / np.i0(KAISER_BETA)
    return u, window


def _branch_table(ratio: float) -> tuple[np.ndarray, int]:
    """Kaiser-windowed sinc interpolation table for one conversion ratio.

    Rows are the tap weights for _PHASE_STEPS+1 fractional delays in [0, 1].
    Each row is normalized to unit sum so DC passes at exactly unity gain.
    """
    shrink = min(1.0, ratio)  # anti-alias scaling when decimating
    support = int(np.ceil(RESAMPLE_TAPS / shrink))
    support += support % 2
    half = support // 2
    # Passband edge at 0.9 * shrink of input Nyquist; the estimated Kaiser
    # transition band sits above it, clamped at Nyquist.
    attn_db = KAISER_BETA / 0.1102 + 8.7
    trans = (attn_db - 8.0) / (2.285 * support) / np.pi
    c_mid = min(0.9 * shrink + trans / 2.0, 1.0)

    u, window = _window_grid(support)
    taps = c_mid * np.sinc(c_mid * u) * window
    taps /= taps.sum(axis=1, keepdims=True)
    return taps.astype(np.float32), half


def resample(x: np.ndarray, rate_in: float, rate_out: float) -> np.ndarray:
    """Windowed-sinc resample of a mono float array between two rates.

    Output length is round(len(x) * rate_out / rate_in). Identical rates
    return a copy unchanged. Tap weights for each output sample come from
    a fractional-delay branch table with linear blending between adjacent
    branches.
    """
    x = np.asarray(x, dtype=np.float32)
    if rate_in <= 0 or rate_out <= 0:
        raise InputError(f"rates must be positive, got {rate_in}, {rate_out}")
    if rate_in == rate_out or len(x) == 0:
        return x.copy()
    ratio = float(rate_out) / float(rate_in)
    n_out = int(round(len(x) * ratio))
    if n_out == 0:
        return np.zeros(0, dtype=np.float32)

    table, half = _branch_table(ratio)
    support = table.shape[1]
    padded = np.concatenate([np.zeros(half, np.float32), x, np.zeros(half + 1, np.float32)])

    out = np.empty(n_out, dtype=np.float32)
    offs = np.arange(-half + 1, half + 1, dtype=np.int64)
    block = 1 << 15
    for lo in range(0, n_out, block):
        j = np.arange(lo, min(lo + block, n_out), dtype=np.float64)
        t = j / ratio
        base = np.floor(t).astype(np.int64)
        frac = t - base
        # blend the two nearest fractional-delay branches
        fidx = frac * _PHASE_STEPS
        b0 = np.floor(fidx).astype(np.int64)
        a = (fidx - b0).astype(np.float32)[:, None]
        weights = table[b0] * (1.0 - a) + table[b0 + 1] * a
        gathered = padded[(base[:, None] + offs[None, :]) + half]
        out[lo:lo + len(j)] = np.einsum("ij,ij->i", gathered, weights)
    return out


def to_mono_16k(a: AudioBuffer) -> AudioBuffer:
    """Convert to the 16 kHz processing rate; 16 kHz input is returned as is."""
    if a.sample_rate == TARGET_RATE:
        return a
    return AudioBuffer(resample(a.samples, a.sample_rate, TARGET_RATE), TARGET_RATE)


SYNTH_KINDS = ("tone-mixture", "chirp", "filtered-noise")


def _segment_lengths(rng, n: int, lo_s: float, hi_s: float, sample_rate: int) -> list:
    """Random partition of n samples into segments of lo_s..hi_s seconds."""
    lengths = []
    left = n
    while left > 0:
        seg = int(rng.uniform(lo_s, hi_s) * sample_rate)
        lengths.append(min(seg, left))
        left -= lengths[-1]
    return lengths


def _edge_envelope(n: int, edge: int) -> np.ndarray:
    """Unit envelope with raised-cosine attack/release over `edge` samples."""
    env = np.ones(n, dtype=np.float64)
    edge = min(edge, n // 2)
    if edge > 0:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(edge) / edge)
        env[:edge] = ramp
        env[n - edge:] = ramp[::-1]
    return env


def synth_track(kind: str, seed: int, duration_s: float, sample_rate: int = TARGET_RATE) -> AudioBuffer:
    """Deterministic synthetic track of one of three kinds.

    A track draws its identity once up front (register, band, voicing)
    and then renders a stream of short events inside that identity, so
    any two windows of one track share a spectral signature while two
    different tracks rarely do. tone-mixture: harmonic chords over a
    fixed note pool. chirp: frequency sweeps confined to a fixed band
    with a fixed companion voice. filtered-noise: pulsed noise in a
    fixed band. Output is peak-normalized to 0.5.
    """
    if kind not in SYNTH_KINDS:
        raise InputError(f"unknown synth kind {kind!r}, expected one of {SYNTH_KINDS}")
    if duration_s <= 0:
        raise InputError(f"duration must be positive, got {duration_s}")
    n = int(round(duration_s * sample_rate))
    rng = rng_from(seed, _KIND_SALT[kind])
    x = np.zeros(n, dtype=np.float64)

    if kind == "tone-mixture":
        root = np.exp(rng.uniform(np.log(70.0), np.log(500.0)))
        pool = root * 2.0 ** np.sort(rng.uniform(0.0, 1.8, size=4))
        rolloff = rng.uniform(0.8, 2.2)
        pos = 0
        for seg in _segment_lengths(rng, n, 0.35, 0.75, sample_rate):
            t = np.arange(seg, dtype=np.float64) / sample_rate
            f0 = pool[rng.integers(len(pool))]
            note = np.zeros(seg, dtype=np.float64)
            for k in range(1, 6):
                amp = rng.uniform(0.7, 1.0) / k ** rolloff
                phase = rng.uniform(0.0, 2.0 * np.pi)
                note += amp * np.sin(2.0 * np.pi * f0 * k * t + phase)
            x[pos:pos + seg] = note * _edge_envelope(seg, int(0.02 * sample_rate))
            pos += seg
    elif kind == "chirp":
        center = np.exp(rng.uniform(np.log(150.0), np.log(2500.0)))
        span = rng.uniform(1.6, 3.2)
        ratio = rng.uniform(1.5, 3.0)
        freq = np.exp(rng.uniform(np.log(center / span), np.log(center * span)))
        pos = 0
        for seg in _segment_lengths(rng, n, 0.5, 1.2, sample_rate):
            target = np.exp(rng.uniform(np.log(center / span), np.log(center * span)))
            inst = np.exp(np.linspace(np.log(freq), np.log(target), seg))
            phase = 2.0 * np.pi * np.cumsum(inst) / sample_rate
            voice = np.sin(phase + rng.uniform(0.0, 2.0 * np.pi))
            voice += 0.4 * np.sin(ratio * phase + rng.uniform(0.0, 2.0 * np.pi))
            x[pos:pos + seg] = voice * _edge_envelope(seg, int(0.02 * sample_rate))
            freq = target
            pos += seg
    else:
        center = np.exp(rng.uniform(np.log(250.0), np.log(3500.0)))
        width_oct = rng.uniform(0.8, 1.5)
        pos = 0
        for seg in _segment_lengths(rng, n, 0.4, 0.9, sample_rate):
            noise = rng.standard_normal(seg)
            spectrum = np.fft.rfft(noise)
            freqs = np.fft.rfftfreq(seg, d=1.0 / sample_rate)
            logdist = np.log2(np.maximum(freqs, 1.0) / center) / width_oct
            shaped = np.fft.irfft(spectrum * np.exp(-0.5 * logdist ** 2), seg)
            t = np.arange(seg, dtype=np.float64) / sample_rate
            pulse_hz = rng.uniform(1.5, 4.0)
            pulse = 0.65 + 0.35 * np.cos(2.0 * np.pi * pulse_hz * t + rng.uniform(0.0, 2.0 * np.pi))
            x[pos:pos + seg] = shaped * pulse * _edge_envelope(seg, int(0.03 * sample_rate))
            pos += seg

    peak = np.max(np.abs(x))
    if peak > 0:
        x = x * (0.5 / peak)
    return AudioBuffer(x.astype(np.float32), sample_rate)


_KIND_SALT = {kind: i + 101 for i, kind in enumerate(SYNTH_KINDS)}


def synth_corpus(n_tracks: int, duration_s: float, seed: int) -> list[AudioBuffer]:
    """n_tracks synthetic tracks cycling through the three kinds."""
    if n_tracks < 1:
        raise InputError("need at least one track")
    return [
        synth_track(SYNTH_KINDS[i % len(SYNTH_KINDS)], derive_seed(seed, i), duration_s)
        for i in range(n_tracks)
    ]
