"""Disentangled variational information bottleneck for paired two-view data."""

from .bounds import LossBreakdown, total_objective
from .data import MultiviewDataset, gen_factor_dataset, gen_glyph_twoview
from .model import BaselineModel, DvibModel, ModelDims, dvib_loss, encode_all
from .train import TrainConfig, train

__all__ = [
    "BaselineModel",
    "DvibModel",
    "LossBreakdown",
    "ModelDims",
    "MultiviewDataset",
    "TrainConfig",
    "dvib_loss",
    "encode_all",
    "gen_factor_dataset",
    "gen_glyph_twoview",
    "total_objective",
    "train",
]

__version__ = "0.1.0"
