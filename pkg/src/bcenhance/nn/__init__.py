"""Minimal reverse-mode autodiff kernel on numpy arrays.

The op set is exactly what the enhancement networks need: 1-D/2-D strided
convolutions with symmetric same-padding, gated linear units, instance
normalization, sub-pixel channel shuffling, elementwise math, reductions,
and an Adam optimizer. Everything is deterministic given the same inputs.
"""

from bcenhance.nn.tensor import (
    Tensor,
    absolute,
    add,
    backward,
    clamp_min,
    conv1d,
    conv2d,
    dot,
    glu,
    instance_norm,
    log,
    mean,
    mul,
    neg,
    relu,
    reshape,
    same_pad_amount,
    shuffle1d,
    sigmoid,
    square,
    sub,
    tensor_sum,
)
from bcenhance.nn.layers import (
    Conv1d,
    Conv2d,
    GatedConv1d,
    GatedConv2d,
    InstanceNorm,
    ResidualBlock,
    init_conv_weight,
)
from bcenhance.nn.optim import Adam, zero_grad
from bcenhance.nn.gradcheck import finite_difference_grad, gradcheck

__all__ = [
    "Tensor",
    "backward",
    "add",
    "sub",
    "mul",
    "neg",
    "absolute",
    "square",
    "log",
    "sigmoid",
    "relu",
    "clamp_min",
    "mean",
    "tensor_sum",
    "reshape",
    "dot",
    "conv1d",
    "conv2d",
    "instance_norm",
    "glu",
    "shuffle1d",
    "same_pad_amount",
    "Conv1d",
    "Conv2d",
    "GatedConv1d",
    "GatedConv2d",
    "InstanceNorm",
    "ResidualBlock",
    "init_conv_weight",
    "Adam",
    "zero_grad",
    "finite_difference_grad",
    "gradcheck",
]
