"""Reverse-mode autodiff, the small encoder-decoder network and its training loop."""

from sdflayers.nn.engine import GraphError, Tensor, parameter
from sdflayers.nn.network import FIELD_HEADS, HEADS, PROBABILISTIC_HEADS, TinyUNet, TinyUNetConfig
from sdflayers.nn.train import (NumericalError, TrainConfig, TrainResult, load_checkpoint,
                                predict_batches, save_checkpoint, train)

__all__ = [
    "GraphError", "Tensor", "parameter", "FIELD_HEADS", "HEADS", "PROBABILISTIC_HEADS", "TinyUNet",
    "TinyUNetConfig", "NumericalError", "TrainConfig", "TrainResult", "load_checkpoint",
    "predict_batches", "save_checkpoint", "train",
]
