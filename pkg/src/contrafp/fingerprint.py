"""Track fingerprinting: overlapping snippets -> unit-norm embeddings.

A fingerprint is the sequence of 256-dimensional float32 embeddings of
2.5 s segments taken every 2.125 s (85% of the segment length, i.e. 15%
overlap). Incomplete tail segments are dropped. Each embedding vector
serializes to exactly 1024 bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import AudioBuffer, TARGET_RATE, to_mono_16k
from .errors import FormatError, InputError
from .features import SNIPPET_SAMPLES, SNIPPET_SECONDS, mel_spectrogram
from .nn import EMBED_DIM, Encoder, ParamSet

SEGMENT_SECONDS = SNIPPET_SECONDS
HOP_FRACTION = 0.85
HOP_SECONDS = SEGMENT_SECONDS * HOP_FRACTION  # 2.125 s
HOP_SAMPLES = int(round(HOP_SECONDS * TARGET_RATE))  # 34000

# Segments are embedded in fixed-size chunks (short chunks padded with a
# repeated segment and the padding discarded) so every row goes through
# identically shaped matrix products regardless of track length.
_EXTRACT_CHUNK = 16

MAGIC = b"CFPF"
VERSION = 1


@dataclass(frozen=True)
class SubFingerprint:
    """One segment's embedding plus its offset into the track, seconds."""

    vector: np.ndarray
    offset_s: float

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float32)
        if v.shape != (EMBED_DIM,):
            raise InputError(f"sub-fingerprint wants shape ({EMBED_DIM},), got {v.shape}")
        object.__setattr__(self, "vector", v)

    def to_bytes(self) -> bytes:
        """The embedding payload: exactly EMBED_DIM * 4 bytes, little-endian."""
        return self.vector.astype("<f4").tobytes()


@dataclass(frozen=True)
class Fingerprint:
    track_ref: str
    subs: tuple[SubFingerprint, ...]

    def __post_init__(self):
        object.__setattr__(self, "subs", tuple(self.subs))

    def __len__(self) -> int:
        return len(self.subs)

    def matrix(self) -> np.ndarray:
        return np.stack([s.vector for s in self.subs]) if self.subs else np.zeros((0, EMBED_DIM), np.float32)


def segment(a: AudioBuffer) -> list[tuple[float, AudioBuffer]]:
    """Split into (offset seconds, 2.5 s segment) pairs at 85% hop.

    The input must already be mono 16 kHz and at least one segment long;
    a trailing partial segment is dropped.
    """
    if a.sample_rate != TARGET_RATE:
        raise InputError(f"segment wants {TARGET_RATE} Hz input, got {a.sample_rate}")
    if len(a) < SNIPPET_SAMPLES:
        raise InputError(f"{len(a)} samples is shorter than one {SNIPPET_SAMPLES}-sample segment")
    out = []
    start = 0
    while start + SNIPPET_SAMPLES <= len(a):
        piece = AudioBuffer(a.samples[start:start + SNIPPET_SAMPLES], TARGET_RATE)
        out.append((start / TARGET_RATE, piece))
        start += HOP_SAMPLES
    return out


def extract(a: AudioBuffer, encoder: Encoder, params: ParamSet, track_ref: str = "") -> Fingerprint:
    """Fingerprint a track: convert to mono 16 kHz, segment, embed."""
    a = to_mono_16k(a)
    pieces = segment(a)
    patches = np.stack([mel_spectrogram(piece).values[None] for _, piece in pieces]).astype(np.float32)
    vectors = np.empty((len(pieces), EMBED_DIM), dtype=np.float32)
    for lo in range(0, len(pieces), _EXTRACT_CHUNK):
        chunk = patches[lo:lo + _EXTRACT_CHUNK]
        n = len(chunk)
        if n < _EXTRACT_CHUNK:
            chunk = np.concatenate([chunk, np.repeat(chunk[:1], _EXTRACT_CHUNK - n, axis=0)])
        vectors[lo:lo + n] = encoder.forward(params, chunk)[:n]
    subs = tuple(SubFingerprint(vectors[i], offset) for i, (offset, _) in enumerate(pieces))
    return Fingerprint(track_ref, subs)


def save_fingerprint(path, fp: Fingerprint) -> None:
    """Binary fingerprint file: magic, version, track ref, count, records.

    Each record is the segment offset as float64 followed by the 1024-byte
    embedding payload.
    """
    name = fp.track_ref.encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(name)), name,
             struct.pack("<I", len(fp.subs))]
    for sub in fp.subs:
        parts.append(struct.pack("<d", sub.offset_s))
        parts.append(sub.to_bytes())
    Path(path).write_bytes(b"".join(parts))


def load_fingerprint(path) -> Fingerprint:
    data = Path(path).read_bytes()
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"truncated fingerprint file: expected {what}", offset=pos)
        out = data[pos:pos + n]
        pos += n
        return out

    if take(4, "magic") != MAGIC:
        raise FormatError(f"bad fingerprint magic, expected {MAGIC!r}", offset=0)
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != VERSION:
        raise FormatError(f"unsupported fingerprint version {version}", offset=4)
    (name_len,) = struct.unpack("<I", take(4, "track ref length"))
    track_ref = take(name_len, "track ref").decode("utf-8")
    (count,) = struct.unpack("<I", take(4, "sub-fingerprint count"))
    subs = []
    for i in range(count):
        (offset_s,) = struct.unpack("<d", take(8, f"offset of sub {i}"))
        payload = take(EMBED_DIM * 4, f"vector of sub {i}")
        subs.append(SubFingerprint(np.frombuffer(payload, dtype="<f4").copy(), offset_s))
    if pos != len(data):
        raise FormatError("trailing bytes after last sub-fingerprint", offset=pos)
    return Fingerprint(track_ref, tuple(subs))
