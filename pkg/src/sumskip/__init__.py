"""Desk-scale NN inference with statistical early termination of partial sums."""

from .engine import (
    FlopsLedger,
    HeadPredictorCfg,
    PruneConfig,
    ReluPredictorCfg,
    RunReport,
    evaluate,
    flops_of,
)
from .modelio import Dataset, Model, gen_blobs, load_idx, load_model, save_model
from .predictors import PartialStats, inv_normal_cdf
from .tensor import Tensor
from .training import TrainCfg, init_model, magnitude_prune_step, sgd_step, train

__all__ = [
    "Dataset",
    "FlopsLedger",
    "HeadPredictorCfg",
    "Model",
    "PartialStats",
    "PruneConfig",
    "ReluPredictorCfg",
    "RunReport",
    "Tensor",
    "TrainCfg",
    "evaluate",
    "flops_of",
    "gen_blobs",
    "init_model",
    "inv_normal_cdf",
    "load_idx",
    "load_model",
    "magnitude_prune_step",
    "save_model",
    "sgd_step",
    "train",
]

__version__ = "0.1.0"
