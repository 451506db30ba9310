"""Minimal numpy autodiff engine and the stress-detection network family."""

from stressanon.neural.layers import BiLSTM, Conv2d, Dropout, Linear, MaxPool2d, Module, MultiHeadAttention
from stressanon.neural.model import (
    REFERENCE_CONFIG,
    SMALL_CONFIG,
    Architecture,
    ConvSpec,
    ModelConfig,
    Network,
    build_network,
    count_parameters,
    load_checkpoint,
    parameter_table,
    save_checkpoint,
)
from stressanon.neural.optim import Adam, AdamState, adam_step
from stressanon.neural.tensor import (
    Tensor,
    concat,
    conv2d,
    dropout,
    lstm,
    max_pool2d,
    no_grad,
    softmax_cross_entropy,
)

__all__ = [
    "Adam", "AdamState", "Architecture", "BiLSTM", "Conv2d", "ConvSpec", "Dropout", "Linear",
    "MaxPool2d", "ModelConfig", "Module", "MultiHeadAttention", "Network", "REFERENCE_CONFIG",
    "SMALL_CONFIG", "Tensor", "adam_step", "build_network", "concat", "conv2d", "count_parameters",
    "dropout", "load_checkpoint", "lstm", "max_pool2d", "no_grad", "parameter_table",
    "save_checkpoint", "softmax_cross_entropy",
]
