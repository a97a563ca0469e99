"""Finite-difference gradient verification.

The oracle only ever calls forward passes: central differences
(f(p + h) - f(p - h)) / 2h on a float64 copy of the parameters, compared
against the analytic gradients of the pipeline under test. Used by tests
and by the `gradcheck` CLI subcommand.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import StateError
from .encoder import Encoder, EncoderConfig, ParamSet


def central_diff(loss_fn: Callable[[ParamSet], float], params: ParamSet,
                 name: str, index: tuple, rel_step: float = 1e-5) -> float:
    """Central finite difference of loss_fn at one parameter coordinate."""
    base = {k: v.astype(np.float64) for k, v in params.items()}
    h = rel_step * max(1.0, abs(float(base[name][index])))
    plus = {k: (v.copy() if k == name else v) for k, v in base.items()}
    plus[name][index] += h
    minus = {k: (v.copy() if k == name else v) for k, v in base.items()}
    minus[name][index] -= h
    return (loss_fn(plus) - loss_fn(minus)) / (2.0 * h)


def reliable_diff(loss_fn: Callable[[ParamSet], float], params: ParamSet,
                  name: str, index: tuple, rel_step: float = 1e-4) -> tuple[float, bool]:
    """Central difference plus a kink probe at a 100x smaller step.

    Finite differences are only meaningful where the loss is smooth
    across the whole step window; a ReLU or pool switch inside it
    corrupts the estimate. The wide step has the least cancellation
    noise, so it provides the estimate; a probe at rel_step/100 moves
    by a different amount across any switch point and so disagrees
    whenever one sits inside the window. Returns (estimate, smooth).
    """
    d1 = central_diff(loss_fn, params, name, index, rel_step)
    d2 = central_diff(loss_fn, params, name, index, rel_step / 100.0)
    scale = max(abs(d1), abs(d2), 1e-8)
    # spread tolerance sits well below the tightest tolerance any caller
    # checks against, with an absolute floor covering cancellation noise
    # in the small-step probe
    return d1, abs(d1 - d2) <= max(1e-7 * scale, 4e-9)


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def pick_coords(params: ParamSet, n: int, seed: int):
    """Endless coordinate stream, round-robin over tensors so the first
    len(params) picks cover every tensor once. n sets the round-robin
    width only; callers draw as many as they need."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
    names = sorted(params)
    i = 0
    while True:
        name = names[i % len(names)]
        flat = int(rng.integers(params[name].size))
        yield name, np.unravel_index(flat, params[name].shape)
        i += 1


@dataclass
class GradCheckRow:
    label: str
    max_rel_err: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.max_rel_err < self.tolerance


def check_encoder(config: EncoderConfig, seed: int = 0, n_coords: int = 20,
                  dtype=np.float32, tolerance: float = 1e-3,
                  loss_weights: np.ndarray | None = None,
                  loss_fn=None) -> GradCheckRow:
    """Gradient-check the full encoder under a scalar loss.

    The default loss is a fixed random weighting of the embeddings. A
    custom loss_fn(embeddings) -> (loss, dloss_dembeddings) can be passed
    to check compositions such as the contrastive objective; it must
    accept embeddings of any float dtype.
    """
    encoder = Encoder(config)
    params = encoder.init_params(seed, dtype=dtype)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7]))
    x = rng.uniform(-4.0, 1.0, size=(2, *config.input_shape))

    if loss_fn is None:
        if loss_weights is None:
            loss_weights = rng.standard_normal((2, config.embed_dim))

        def loss_fn(emb):
            w = loss_weights.astype(emb.dtype)
            return float(np.sum((emb * w).astype(np.float64))), w

    def scalar_loss(p: ParamSet) -> float:
        probe = Encoder(config)
        emb = probe.forward(p, x.astype(p["fc2.w"].dtype))
        loss, _ = loss_fn(emb)
        return loss

    emb = encoder.forward(params, x.astype(dtype), record=True)
    _, upstream = loss_fn(emb)
    grads = encoder.backward(upstream.astype(dtype))
    gscale = {name: max(float(np.max(np.abs(g))), 1e-8) for name, g in grads.items()}

    worst = 0.0
    measured = 0
    attempts = 0
    coords = pick_coords(params, n_coords, seed + 13)
    while measured < n_coords:
        attempts += 1
        if attempts > 5 * n_coords:
            raise StateError("finite differences kept landing on non-smooth points; "
                             "try another seed")
        name, index = next(coords)
        numeric, consistent = reliable_diff(scalar_loss, params, name, index)
        if not consistent:
            # a unit switched state inside the probe window; the true
            # gradient is undefined there, so measure elsewhere
            continue
        analytic = float(grads[name][index])
        err = relative_error(analytic, numeric, floor=1e-3 * gscale[name])
        worst = max(worst, err)
        measured += 1
    label = f"encoder[{','.join(map(str, config.conv_channels))}] {np.dtype(dtype).name}"
    return GradCheckRow(label, worst, tolerance)
