"""Minimal numpy network toolkit with manual backpropagation."""

from .gradcheck import GradCheckReport, check_arrays, gradient_check, relative_error
from .layers import (
    Attention,
    ConcatBranch,
    Conv2d,
    Dense,
    Flatten,
    Layer,
    MaxPool,
    Residual,
    softmax,
)
from .model import NetworkModel, mlp
from .optim import Adam, TrainConfig, clip_by_global_norm, optimizer_step

__all__ = [
    "Adam", "Attention", "ConcatBranch", "Conv2d", "Dense", "Flatten", "GradCheckReport", "Layer",
    "MaxPool", "NetworkModel", "Residual", "TrainConfig", "check_arrays", "clip_by_global_norm",
    "gradient_check", "mlp", "optimizer_step", "relative_error", "softmax",
]
