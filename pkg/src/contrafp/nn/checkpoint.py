"""Encoder checkpoint serialization.

Layout (all integers little-endian uint32 unless noted):

    magic "CFP1"
    version
    n_conv, conv_channels..., embed_dim, input channels, mels, frames
    tensor_count
    per tensor: name_len, name (utf-8), rank, dims..., float32 LE payload

Tensors are written in sorted name order so identical parameter sets
serialize to identical bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .encoder import Encoder, EncoderConfig, ParamSet

MAGIC = b"CFP1"
VERSION = 1


def save_checkpoint(path, config: EncoderConfig, params: ParamSet) -> None:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    parts.append(struct.pack("<I", len(config.conv_channels)))
    parts.append(struct.pack(f"<{len(config.conv_channels)}I", *config.conv_channels))
    parts.append(struct.pack("<4I", config.embed_dim, *config.input_shape))
    parts.append(struct.pack("<I", len(params)))
    for name in sorted(params):
        raw = name.encode("utf-8")
        tensor = np.ascontiguousarray(params[name], dtype="<f4")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", tensor.ndim))
        parts.append(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        parts.append(tensor.tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated checkpoint: expected {what}", offset=self.pos)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def load_checkpoint(path) -> tuple[EncoderConfig, ParamSet]:
    reader = _Reader(Path(path).read_bytes())
    if reader.take(4, "magic") != MAGIC:
        raise FormatError(f"bad checkpoint magic, expected {MAGIC!r}", offset=0)
    version = reader.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    n_conv = reader.u32("conv stage count")
    channels = tuple(reader.u32("conv channels") for _ in range(n_conv))
    embed_dim = reader.u32("embed_dim")
    input_shape = tuple(reader.u32("input shape") for _ in range(3))
    config = EncoderConfig(conv_channels=channels, embed_dim=embed_dim, input_shape=input_shape)

    params: ParamSet = {}
    for _ in range(reader.u32("tensor count")):
        name_len = reader.u32("tensor name length")
        name = reader.take(name_len, "tensor name").decode("utf-8")
        rank = reader.u32("tensor rank")
        dims = tuple(reader.u32("tensor dims") for _ in range(rank))
        count = int(np.prod(dims)) if dims else 1
        payload = reader.take(count * 4, f"payload of {name}")
        params[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    if reader.pos != len(reader.data):
        raise FormatError("trailing bytes after last tensor", offset=reader.pos)

    expected = Encoder(config).param_shapes()
    if set(expected) != set(params):
        raise FormatError(f"tensor names do not match architecture: {sorted(set(expected) ^ set(params))}")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise FormatError(f"{name} has shape {params[name].shape}, expected {shape}")
    return config, params
