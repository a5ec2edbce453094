"""Minimal reverse-mode differentiable tensor kernels and optimizers."""

from .autograd import (
    DTYPES,
    Tensor,
    as_tensor,
    clip,
    concat,
    exp,
    grad_enabled,
    log,
    matmul,
    no_grad,
    square,
    stack,
    tabs,
)
from .gradcheck import GradCheckReport, finite_difference_check
from .ops import (
    conv2d,
    conv3d,
    conv_lstm_cell,
    conv_output_shape,
    deconv2d,
    dense,
    dropout,
    lstm_cell,
    maxpool3d,
    one_hot,
    relu,
    sigmoid,
    softmax,
    softmax_cross_entropy,
    tanh,
)
from .optim import SGD, Parameter, RMSProp, rmsprop_step, sgd_step

__all__ = [
    "DTYPES",
    "GradCheckReport",
    "Parameter",
    "RMSProp",
    "SGD",
    "Tensor",
    "as_tensor",
    "clip",
    "concat",
    "conv2d",
    "conv3d",
    "conv_lstm_cell",
    "conv_output_shape",
    "deconv2d",
    "dense",
    "dropout",
    "exp",
    "finite_difference_check",
    "grad_enabled",
    "log",
    "lstm_cell",
    "matmul",
    "maxpool3d",
    "no_grad",
    "one_hot",
    "relu",
    "rmsprop_step",
    "sgd_step",
    "sigmoid",
    "softmax",
    "softmax_cross_entropy",
    "square",
    "stack",
    "tabs",
    "tanh",
]
