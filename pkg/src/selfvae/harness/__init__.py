"""Configuration, data, optimization, checkpoints and experiment drivers."""

from .checkpoint import Checkpoint
from .config import RunConfig
from .data import augment, ingest_dataset, make_sprites
from .optim import AdamaxState, adamax_step
from .train import TrainResult, ablate_prior, train

__all__ = [
    "AdamaxState",
    "Checkpoint",
    "RunConfig",
    "TrainResult",
    "ablate_prior",
    "adamax_step",
    "augment",
    "ingest_dataset",
    "make_sprites",
    "train",
]
