"""Parameter containers for the network building blocks.

Containers are plain dataclasses of tensors plus a ``__call__`` that runs the
forward pass, and a ``named_parameters`` iterator used by the optimizer and
the checkpoint writer. Iteration order is fixed by construction order so runs
are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from bcenhance.nn import tensor as ops
from bcenhance.nn.tensor import Tensor

NamedParams = Iterator[tuple[str, Tensor]]


def init_conv_weight(rng: np.random.Generator, shape: tuple[int, ...], dtype=np.float64) -> np.ndarray:
    """He-style normal init: std = sqrt(2 / fan_in) with fan_in = in_channels * kernel size."""
    fan_in = int(np.prod(shape[1:]))
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


@dataclass
class Conv1d:
    weight: Tensor  # [out, in, k]
    bias: Tensor  # [out]
    stride: int = 1

    @classmethod
    def build(cls, rng, in_channels: int, out_channels: int, kernel: int, stride: int = 1, dtype=np.float64):
        weight = Tensor(init_conv_weight(rng, (out_channels, in_channels, kernel), dtype), requires_grad=True)
        bias = Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True)
        return cls(weight, bias, stride)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv1d(x, self.weight, self.bias, self.stride)

    def named_parameters(self, prefix: str = "") -> NamedParams:
        yield prefix + "weight", self.weight
        yield prefix + "bias", self.bias


@dataclass
class Conv2d:
    weight: Tensor  # [out, in, kh, kw]
    bias: Tensor  # [out]
    stride: tuple[int, int] = (1, 1)

    @classmethod
    def build(cls, rng, in_channels: int, out_channels: int, kernel: tuple[int, int],
              stride: tuple[int, int] = (1, 1), dtype=np.float64):
        weight = Tensor(init_conv_weight(rng, (out_channels, in_channels) + tuple(kernel), dtype),
                        requires_grad=True)
        bias = Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True)
        return cls(weight, bias, tuple(stride))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride)

    def named_parameters(self, prefix: str = "") -> NamedParams:
        yield prefix + "weight", self.weight
        yield prefix + "bias", self.bias


@dataclass
class InstanceNorm:
    scale: Tensor
    shift: Tensor
    eps: float = 1e-6

    @classmethod
    def build(cls, channels: int, dtype=np.float64):
        return cls(Tensor(np.ones(channels, dtype=dtype), requires_grad=True),
                   Tensor(np.zeros(channels, dtype=dtype), requires_grad=True))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.instance_norm(x, self.scale, self.shift, self.eps)

    def named_parameters(self, prefix: str = "") -> NamedParams:
        yield prefix + "scale", self.scale
        yield prefix + "shift", self.shift


@dataclass
class GatedConv1d:
    """Conv block gated by a parallel conv path: out = lin(x) * sigmoid(gate(x)).

    Each path has its own weights; when the block is normalized, each path
    also gets its own instance norm between convolution and gating.
    """

    linear: Conv1d
    gate: Conv1d
    norm_linear: InstanceNorm | None = None
    norm_gate: InstanceNorm | None = None

    @classmethod
    def build(cls, rng, in_channels: int, out_channels: int, kernel: int, stride: int = 1,
              normalized: bool = True, dtype=np.float64):
        linear = Conv1d.build(rng, in_channels, out_channels, kernel, stride, dtype)
        gate = Conv1d.build(rng, in_channels, out_channels, kernel, stride, dtype)
        norm_l = InstanceNorm.build(out_channels, dtype) if normalized else None
        norm_g = InstanceNorm.build(out_channels, dtype) if normalized else None
        return cls(linear, gate, norm_l, norm_g)

    def __call__(self, x: Tensor) -> Tensor:
        lin = self.linear(x)
        gat = self.gate(x)
        if self.norm_linear is not None:
            lin = self.norm_linear(lin)
        if self.norm_gate is not None:
            gat = self.norm_gate(gat)
        return ops.glu(lin, gat)

    def named_parameters(self, prefix: str = "") -> NamedParams:
        yield from self.linear.named_parameters(prefix + "linear.")
        yield from self.gate.named_parameters(prefix + "gate.")
        if self.norm_linear is not None:
            yield from self.norm_linear.named_parameters(prefix + "norm_linear.")
        if self.norm_gate is not None:
            yield from self.norm_gate.named_parameters(prefix + "norm_gate.")


@dataclass
class GatedConv2d:
    linear: Conv2d
    gate: Conv2d
    norm_linear: InstanceNorm | None = None
    norm_gate: InstanceNorm | None = None

    @classmethod
    def build(cls, rng, in_channels: int, out_channels: int, kernel: tuple[int, int],
              stride: tuple[int, int] = (1, 1), normalized: bool = True, dtype=np.float64):
        linear = Conv2d.build(rng, in_channels, out_channels, kernel, stride, dtype)
        gate = Conv2d.build(rng, in_channels, out_channels, kernel, stride, dtype)
        norm_l = InstanceNorm.build(out_channels, dtype) if normalized else None
        norm_g = InstanceNorm.build(out_channels, dtype) if normalized else None
        return cls(linear, gate, norm_l, norm_g)

    def __call__(self, x: Tensor) -> Tensor:
        lin = self.linear(x)
        gat = self.gate(x)
        if self.norm_linear is not None:
            lin = self.norm_linear(lin)
        if self.norm_gate is not None:
            gat = self.norm_gate(gat)
        return ops.glu(lin, gat)

    def named_parameters(self, prefix: str = "") -> NamedParams:
        yield from self.linear.named_parameters(prefix + "linear.")
        yield from self.gate.named_parameters(prefix + "gate.")
        if self.norm_linear is not None:
            yield from self.norm_linear.named_parameters(prefix + "norm_linear.")
        if self.norm_gate is not None:
            yield from self.norm_gate.named_parameters(prefix + "norm_gate.")


@dataclass
class ResidualBlock:
    """Two conv -> instance norm -> relu stages plus the input skip.

    The first stage widens the channel count, the second narrows it back so
    the skip connection adds tensors of identical shape.
    """

    conv1: Conv1d
    norm1: InstanceNorm
    conv2: Conv1d
    norm2: InstanceNorm

    @classmethod
    def build(cls, rng, channels: int, hidden: int, kernel: int, dtype=np.float64):
        return cls(
            Conv1d.build(rng, channels, hidden, kernel, 1, dtype),
            InstanceNorm.build(hidden, dtype),
            Conv1d.build(rng, hidden, channels, kernel, 1, dtype),
            InstanceNorm.build(channels, dtype),
        )

    def __call__(self, x: Tensor) -> Tensor:
        h = ops.relu(self.norm1(self.conv1(x)))
        h = ops.relu(self.norm2(self.conv2(h)))
        return ops.add(h, x)

    def named_parameters(self, prefix: str = "") -> NamedParams:
        yield from self.conv1.named_parameters(prefix + "conv1.")
        yield from self.norm1.named_parameters(prefix + "norm1.")
        yield from self.conv2.named_parameters(prefix + "conv2.")
        yield from self.norm2.named_parameters(prefix + "norm2.")
