"""Fingerprint database: exact cosine nearest neighbor and vote matching.

The database is one contiguous float32 matrix of unit-norm rows plus a
row -> track ownership table. Lookup is an exact linear scan as a blocked
matrix-vector product with float64 accumulation, so results match a
double-precision brute-force oracle; ties break to the lowest row index.
Identification runs nearest-neighbor per query sub-fingerprint and ranks
tracks by (votes, total similarity, track id).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError, StateError
from .fingerprint import Fingerprint
from .nn import EMBED_DIM

MAGIC = b"CFPD"
VERSION = 1
_SCAN_BLOCK = 4096


@dataclass(frozen=True)
class TrackEntry:
    track_id: int
    name: str
    sub_count: int


@dataclass(frozen=True)
class MatchResult:
    track_id: int
    name: str
    votes: int
    total_similarity: float
    per_query_nn: tuple[tuple[int, float], ...]  # (row, similarity) per query sub


class FingerprintDb:
    """Append-only store of track fingerprints."""

    def __init__(self, dim: int = EMBED_DIM):
        self.dim = dim
        self._blocks: list[np.ndarray] = []
        self._matrix: np.ndarray | None = np.zeros((0, dim), dtype=np.float32)
        self._owners = np.zeros(0, dtype=np.int32)
        self._tracks: list[TrackEntry] = []

    @property
    def n_tracks(self) -> int:
        return len(self._tracks)

    @property
    def n_rows(self) -> int:
        return len(self._owners)

    @property
    def tracks(self) -> tuple[TrackEntry, ...]:
        return tuple(self._tracks)

    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            self._matrix = (np.concatenate(self._blocks, axis=0)
                            if self._blocks else np.zeros((0, self.dim), np.float32))
            self._blocks = [self._matrix]
        return self._matrix

    def add_track(self, fp: Fingerprint, name: str | None = None) -> int:
        """Append a track's sub-fingerprints; returns the new track id."""
        if len(fp) == 0:
            raise InputError("cannot add a track with an empty fingerprint")
        rows = fp.matrix().astype(np.float32)
        if rows.shape[1] != self.dim:
            raise InputError(f"fingerprint dim {rows.shape[1]} does not match database dim {self.dim}")
        norms = np.linalg.norm(rows.astype(np.float64), axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-4):
            raise InputError("sub-fingerprints must be unit-norm within 1e-4")
        track_id = len(self._tracks)
        self._tracks.append(TrackEntry(track_id, name if name is not None else fp.track_ref, len(rows)))
        self._blocks = [self.matrix(), rows]
        self._matrix = None
        self._owners = np.concatenate([self._owners, np.full(len(rows), track_id, np.int32)])
        return track_id

    def _best_rows(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Exact argmax of dot products for each query; ties to lowest row."""
        matrix = self.matrix()
        q64 = queries.astype(np.float64).T  # (dim, m)
        best_sim = np.full(queries.shape[0], -np.inf)
        best_row = np.zeros(queries.shape[0], dtype=np.int64)
        for lo in range(0, len(matrix), _SCAN_BLOCK):
            block = matrix[lo:lo + _SCAN_BLOCK].astype(np.float64)
            sims = block @ q64  # (block, m)
            arg = np.argmax(sims, axis=0)
            top = sims[arg, np.arange(sims.shape[1])]
            better = top > best_sim  # strict: earlier blocks keep ties
            best_sim[better] = top[better]
            best_row[better] = arg[better] + lo
        return best_row, best_sim

    def nearest(self, query: np.ndarray) -> tuple[int, float]:
        """Most similar row for one unit-norm query vector."""
        if self.n_rows == 0:
            raise StateError("nearest() on an empty database")
        query = np.asarray(query, dtype=np.float32)
        if query.shape != (self.dim,):
            raise InputError(f"query must have shape ({self.dim},), got {query.shape}")
        rows, sims = self._best_rows(query[None, :])
        return int(rows[0]), float(sims[0])

    def identify(self, fp: Fingerprint) -> list[MatchResult]:
        """Rank tracks by nearest-neighbor votes over the query's subs.

        Sort order: votes desc, then total similarity of winning subs
        desc, then track id asc. Only tracks receiving votes appear.
        """
        if self.n_rows == 0:
            raise StateError("identify() on an empty database")
        if len(fp) == 0:
            raise InputError("cannot identify an empty fingerprint")
        rows, sims = self._best_rows(fp.matrix())
        owners = self._owners[rows]
        per_query = tuple((int(r), float(s)) for r, s in zip(rows, sims))
        results = []
        for track_id in np.unique(owners):
            mask = owners == track_id
            # sims are summed in sorted order so the total is independent
            # of query sub order
            total = float(np.sum(np.sort(sims[mask])))
            results.append(MatchResult(int(track_id), self._tracks[track_id].name,
                                       int(mask.sum()), total, per_query))
        results.sort(key=lambda r: (-r.votes, -r.total_similarity, r.track_id))
        return results

    def save(self, path) -> None:
        """Write magic, version, track table, then the raw row matrix."""
        parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<II", self.dim, len(self._tracks))]
        for entry in self._tracks:
            raw = entry.name.encode("utf-8")
            parts.append(struct.pack("<II", entry.track_id, len(raw)))
            parts.append(raw)
            parts.append(struct.pack("<I", entry.sub_count))
        parts.append(self.matrix().astype("<f4").tobytes())
        Path(path).write_bytes(b"".join(parts))

    @classmethod
    def load(cls, path) -> "FingerprintDb":
        data = Path(path).read_bytes()
        pos = 0

        def take(n: int, what: str) -> bytes:
            nonlocal pos
            if pos + n > len(data):
                raise FormatError(f"truncated database: expected {what}", offset=pos)
            out = data[pos:pos + n]
            pos += n
            return out

        if take(4, "magic") != MAGIC:
            raise FormatError(f"bad database magic, expected {MAGIC!r}", offset=0)
        (version,) = struct.unpack("<I", take(4, "version"))
        if version != VERSION:
            raise FormatError(f"unsupported database version {version}", offset=4)
        dim, n_tracks = struct.unpack("<II", take(8, "dim and track count"))
        db = cls(dim=dim)
        owners = []
        for i in range(n_tracks):
            track_id, name_len = struct.unpack("<II", take(8, f"track {i} header"))
            if track_id != i:
                raise FormatError(f"track ids must be sequential, got {track_id} at position {i}")
            name = take(name_len, f"track {i} name").decode("utf-8")
            (sub_count,) = struct.unpack("<I", take(4, f"track {i} sub count"))
            db._tracks.append(TrackEntry(track_id, name, sub_count))
            owners.append(np.full(sub_count, track_id, np.int32))
        total_rows = int(sum(t.sub_count for t in db._tracks))
        payload = take(total_rows * dim * 4, "row matrix")
        if pos != len(data):
            raise FormatError("trailing bytes after row matrix", offset=pos)
        db._blocks = []
        db._matrix = np.frombuffer(payload, dtype="<f4").reshape(total_rows, dim).copy()
        db._blocks = [db._matrix]
        db._owners = np.concatenate(owners) if owners else np.zeros(0, np.int32)
        return db
