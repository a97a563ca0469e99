"""Convolutional embedding encoder.

Input is a (batch, 1, 128, 200) log-Mel patch. Each stage is
[3x3 conv, ReLU, 2x2 max-pool]; the stack is followed by global average
pooling, a hidden fully connected layer with ReLU, a final fully
connected layer to 256 dimensions, and row-wise L2 normalization. No
batch normalization anywhere. Parameters live in a plain name -> array
dict so they can be combined elementwise and serialized tensor by tensor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, StateError
from . import layers

ParamSet = dict[str, np.ndarray]

EMBED_DIM = 256
INPUT_SHAPE = (1, 128, 200)


@dataclass(frozen=True)
class EncoderConfig:
    """Architecture knobs. The embedding width is fixed at 256."""

    conv_channels: tuple[int, ...] = (16, 32, 64)
    embed_dim: int = EMBED_DIM
    input_shape: tuple[int, int, int] = INPUT_SHAPE

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        if len(self.conv_channels) == 0:
            raise ConfigError("conv_channels must be non-empty")
        if any(c < 1 for c in self.conv_channels):
            raise ConfigError(f"conv_channels must be positive, got {self.conv_channels}")
        if self.embed_dim != EMBED_DIM:
            raise ConfigError(f"embed_dim is fixed at {EMBED_DIM}, got {self.embed_dim}")
        if len(self.input_shape) != 3:
            raise ConfigError(f"input_shape must be (channels, mels, frames), got {self.input_shape}")
        h, w = self.input_shape[1], self.input_shape[2]
        if min(h, w) // (2 ** len(self.conv_channels)) < 1:
            raise ConfigError(f"{len(self.conv_channels)} pooling stages exhaust input {h}x{w}")


class Encoder:
    """Stateless network definition plus a tape recorded by forward."""

    def __init__(self, config: EncoderConfig = EncoderConfig()):
        self.config = config
        self._tape = None

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        c_in = self.config.input_shape[0]
        for i, c_out in enumerate(self.config.conv_channels):
            shapes[f"conv{i}.w"] = (c_out, c_in, 3, 3)
            shapes[f"conv{i}.b"] = (c_out,)
            c_in = c_out
        shapes["fc1.w"] = (c_in, EMBED_DIM)
        shapes["fc1.b"] = (EMBED_DIM,)
        shapes["fc2.w"] = (EMBED_DIM, EMBED_DIM)
        shapes["fc2.b"] = (EMBED_DIM,)
        return shapes

    def init_params(self, seed: int, dtype=np.float32) -> ParamSet:
        """Kaiming-uniform fan-in weights, zero biases."""
        rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
        params: ParamSet = {}
        for name, shape in self.param_shapes().items():
            if name.endswith(".b"):
                params[name] = np.zeros(shape, dtype=dtype)
                continue
            fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
            bound = np.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
        return params

    def _check(self, params: ParamSet, x: np.ndarray) -> None:
        shapes = self.param_shapes()
        missing = sorted(set(shapes) ^ set(params))
        if missing:
            raise ConfigError(f"parameter names do not match architecture: {missing}")
        for name, shape in shapes.items():
            if params[name].shape != shape:
                raise ConfigError(f"{name} has shape {params[name].shape}, expected {shape}")
        if x.ndim != 4 or x.shape[1:] != self.config.input_shape:
            raise ConfigError(
                f"input shape {x.shape} does not match (batch, {', '.join(map(str, self.config.input_shape))})"
            )

    def forward(self, params: ParamSet, x: np.ndarray, record: bool = False) -> np.ndarray:
        """Embed a batch; rows come out unit-norm.

        With record=True the intermediate caches are kept so backward can
        run afterwards.
        """
        x = np.asarray(x)
        self._check(params, x)
        dtype = params["fc2.w"].dtype
        out = x.astype(dtype, copy=False)
        tape = []
        for i in range(len(self.config.conv_channels)):
            out, cache = layers.conv3x3_forward(out, params[f"conv{i}.w"], params[f"conv{i}.b"])
            tape.append((f"conv{i}", cache))
            out, cache = layers.relu_forward(out)
            tape.append(("relu", cache))
            out, cache = layers.maxpool2x2_forward(out)
            tape.append(("pool", cache))
        out, cache = layers.gap_forward(out)
        tape.append(("gap", cache))
        out, cache = layers.fc_forward(out, params["fc1.w"], params["fc1.b"])
        tape.append(("fc1", cache))
        out, cache = layers.relu_forward(out)
        tape.append(("relu", cache))
        out, cache = layers.fc_forward(out, params["fc2.w"], params["fc2.b"])
        tape.append(("fc2", cache))
        out, cache = layers.l2norm_forward(out)
        tape.append(("l2norm", cache))
        self._tape = tape if record else self._tape
        return out

    def backward(self, upstream: np.ndarray) -> ParamSet:
        """Gradients of sum(upstream * embeddings) w.r.t. every parameter.

        Requires a preceding forward(..., record=True).
        """
        if self._tape is None:
            raise StateError("backward called without a recorded forward pass")
        grads: ParamSet = {}
        dy = np.asarray(upstream)
        for kind, cache in reversed(self._tape):
            if kind == "l2norm":
                dy = layers.l2norm_backward(dy, cache)
            elif kind == "relu":
                dy = layers.relu_backward(dy, cache)
            elif kind in ("fc1", "fc2"):
                dy, dw, db = layers.fc_backward(dy, cache)
                grads[f"{kind}.w"] = dw
                grads[f"{kind}.b"] = db
            elif kind == "gap":
                dy = layers.gap_backward(dy, cache)
            elif kind == "pool":
                dy = layers.maxpool2x2_backward(dy, cache)
            else:
                dy, dw, db = layers.conv3x3_backward(dy, cache)
                grads[f"{kind}.w"] = dw
                grads[f"{kind}.b"] = db
        return grads
