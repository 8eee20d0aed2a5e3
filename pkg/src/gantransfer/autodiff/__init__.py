"""Numpy-backed reverse-mode autodiff engine."""
from .conv import conv2d, conv_output_size, conv_transpose2d, conv_transpose_output_size
from .functional import (
    BCE_EPS,
    RunningStats,
    activation,
    avg_pool2d,
    batchnorm2d,
    bce,
    global_avg_pool,
    leaky_relu,
    linear,
    loss,
    max_pool2d,
    relu,
    sigmoid,
    softmax_cross_entropy,
    tanh,
)
from .tensor import Tensor, concat, elementwise, is_grad_enabled, matmul, no_grad, tensor

__all__ = [
    "BCE_EPS", "RunningStats", "Tensor", "activation", "avg_pool2d", "batchnorm2d", "bce",
    "concat", "conv2d", "conv_output_size", "conv_transpose2d", "conv_transpose_output_size",
    "elementwise", "global_avg_pool", "is_grad_enabled", "leaky_relu", "linear", "loss",
    "matmul", "max_pool2d", "no_grad", "relu", "sigmoid", "softmax_cross_entropy", "tanh",
    "tensor",
]
