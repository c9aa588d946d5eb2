"""Minimal training substrate: flat-parameter models, SGD, data handling, metrics."""

from .models import ModelSpec, sgd
from .metrics import EvalReport, accuracy, balanced_accuracy, auroc, evaluate
from .data import Dataset, load_idx, partition, downsample, synthetic_blobs

__all__ = [
    "ModelSpec",
    "sgd",
    "EvalReport",
    "accuracy",
    "balanced_accuracy",
    "auroc",
    "evaluate",
    "Dataset",
    "load_idx",
    "partition",
    "downsample",
    "synthetic_blobs",
]
