"""SGD with momentum and weight decay, plus the cosine learning-rate law."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, InputError
from .encoder import ParamSet

SGD_MOMENTUM = 0.9
WEIGHT_DECAY = 1e-4


def sgd_step(params: ParamSet, grads: ParamSet, lr: float,
             momentum: float = SGD_MOMENTUM, weight_decay: float = WEIGHT_DECAY,
             velocity: ParamSet | None = None) -> tuple[ParamSet, ParamSet]:
    """One update: v <- momentum*v + grad + weight_decay*p; p <- p - lr*v.

    Returns fresh (params, velocity) dicts; a None velocity starts at zero.
    """
    if set(params) != set(grads):
        raise ConfigError(f"param/grad name mismatch: {sorted(set(params) ^ set(grads))}")
    if velocity is None:
        velocity = {name: np.zeros_like(p) for name, p in params.items()}
    if set(velocity) != set(params):
        raise ConfigError("velocity names do not match params")
    new_params: ParamSet = {}
    new_velocity: ParamSet = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ConfigError(f"{name}: grad shape {g.shape} != param shape {p.shape}")
        dtype = p.dtype
        v = (velocity[name] * dtype.type(momentum)
             + g.astype(dtype, copy=False)
             + p * dtype.type(weight_decay))
        new_velocity[name] = v
        new_params[name] = p - dtype.type(lr) * v
    return new_params, new_velocity


def cosine_lr(step: int, total_steps: int, lr0: float = 0.03) -> float:
    """Half-cosine decay from lr0 at step 0 to 0 at total_steps."""
    if total_steps < 1:
        raise InputError(f"total_steps must be >= 1, got {total_steps}")
    if not (0 <= step <= total_steps):
        raise InputError(f"step {step} outside [0, {total_steps}]")
    return 0.5 * lr0 * (1.0 + np.cos(np.pi * step / total_steps))
