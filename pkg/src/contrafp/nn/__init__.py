"""From-scratch neural network: encoder, optimizer, checkpoints, gradient checks."""

from .checkpoint import load_checkpoint, save_checkpoint
from .encoder import EMBED_DIM, Encoder, EncoderConfig, ParamSet
from .optim import SGD_MOMENTUM, WEIGHT_DECAY, cosine_lr, sgd_step

__all__ = [
    "EMBED_DIM",
    "Encoder",
    "EncoderConfig",
    "ParamSet",
    "SGD_MOMENTUM",
    "WEIGHT_DECAY",
    "cosine_lr",
    "sgd_step",
    "load_checkpoint",
    "save_checkpoint",
]
