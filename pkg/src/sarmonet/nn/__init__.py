"""Minimal numpy engine for the MONet network: layers, model, Adam, weight files."""

from .grid import Grid
from .layers import (BatchNorm, ConvLayer, batch_norm, batch_norm_backward, conv2d, conv2d_backward,
                     relu, relu_backward)
from .model import MonetModel, monet_backward, monet_forward, param_count, predict, skip_layers
from .optim import Adam, adam_step
from .weights import decode_monw, encode_monw, load_weights, save_weights

__all__ = [
    "Adam", "BatchNorm", "ConvLayer", "Grid", "MonetModel", "adam_step", "batch_norm",
    "batch_norm_backward", "conv2d", "conv2d_backward", "decode_monw", "encode_monw",
    "load_weights", "monet_backward", "monet_forward", "param_count", "predict", "relu",
    "relu_backward", "save_weights", "skip_layers",
]
