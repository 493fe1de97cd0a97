"""Gradient verification against central finite differences.

``gradcheck`` runs one analytic backward pass, then perturbs a sample of
input coordinates by ±h and compares the numeric slope to the analytic one.
The relative error for a coordinate is |a - n| / max(|a|, |n|, floor); the
floor keeps finite-difference roundoff on near-zero gradients from counting
as disagreement. Callers should evaluate in float64.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from bcenhance.nn import tensor as ops
from bcenhance.nn.tensor import Tensor

DENOM_FLOOR = 1e-3


def finite_difference_grad(func: Callable[..., Tensor], inputs: Sequence[Tensor],
                           which: int, index: tuple[int, ...], h: float = 1e-5) -> float:
    """Central-difference slope of a scalar-valued func at one input coordinate."""
    target = inputs[which]
    original = target.data[index]
    target.data[index] = original + h
    f_plus = func(*inputs).item()
    target.data[index] = original - h
    f_minus = func(*inputs).item()
    target.data[index] = original
    return (f_plus - f_minus) / (2.0 * h)


def gradcheck(func: Callable[..., Tensor], inputs: Sequence[Tensor], h: float = 1e-5,
              max_coords_per_input: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Return the worst relative error between analytic and numeric gradients.

    Parameters
    ----------
    func : callable
        Maps the input tensors to a scalar Tensor. Must be side-effect free.
    inputs : sequence of Tensor
        Tensors marked ``requires_grad`` are checked; others are constants.
    h : float
        Central-difference step.
    max_coords_per_input : int or None
        If set, check a random sample of this many coordinates per input
        instead of every coordinate. Requires ``rng``.
    rng : numpy Generator
        Source for the coordinate sample.
    """
    for t in inputs:
        t.grad = None
    loss = func(*inputs)
    ops.backward(loss)

    worst = 0.0
    for i, t in enumerate(inputs):
        if not t.requires_grad:
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        coords = list(np.ndindex(*t.data.shape)) if t.data.shape else [()]
        if max_coords_per_input is not None and len(coords) > max_coords_per_input:
            if rng is None:
                raise ValueError("coordinate sampling requires an rng")
            picks = rng.choice(len(coords), size=max_coords_per_input, replace=False)
            coords = [coords[int(k)] for k in picks]
        for index in coords:
            numeric = finite_difference_grad(func, inputs, i, index, h)
            a = float(analytic[index])
            err = abs(a - numeric) / max(abs(a), abs(numeric), DENOM_FLOOR)
            worst = max(worst, err)
    return worst
