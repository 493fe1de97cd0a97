"""Adam optimizer over a fixed, ordered parameter list."""

from __future__ import annotations

import numpy as np

from bcenhance.errors import ConfigError
from bcenhance.nn.tensor import Tensor


def zero_grad(params: list[Tensor]) -> None:
    for p in params:
        p.grad = None


class Adam:
    """Adam with bias correction.

    Moment estimates are kept per parameter in the order the parameter list
    was given, which the checkpoint writer relies on. ``step`` counts
    completed updates and drives the bias-correction terms.
    """

    def __init__(self, params: list[Tensor], lr: float,
                 beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        if not 0.0 <= beta1 < 1.0 or not 0.0 <= beta2 < 1.0:
            raise ConfigError(f"betas must lie in [0, 1), got {beta1}, {beta2}")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self._scratch: dict = {}

    def _buffer(self, slot: int, like: np.ndarray) -> np.ndarray:
        """Reusable work array matching ``like``; avoids per-step temporaries."""
        buf = self._scratch.get((slot, like.dtype))
        if buf is None or buf.size < like.size:
            buf = np.empty(like.size, dtype=like.dtype)
            self._scratch[(slot, like.dtype)] = buf
        return buf[: like.size].reshape(like.shape)

    def step(self) -> None:
        """Apply one update in place; parameters with no grad are treated as zero-grad."""
        self.step_count += 1
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        # lr * (m/c1) / (sqrt(v/c2) + eps) == scale * m / (sqrt(v) + eps*sqrt(c2));
        # the rearrangement saves a full pass over v.
        root_c2 = np.sqrt(c2)
        scale = self.lr * root_c2 / c1
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            num = self._buffer(0, m)
            den = self._buffer(1, m)
            m *= self.beta1
            v *= self.beta2
            if g is not None:
                np.multiply(g, 1.0 - self.beta1, out=num)
                m += num
                np.multiply(g, g, out=num)
                num *= 1.0 - self.beta2
                v += num
            np.sqrt(v, out=den)
            den += self.eps * root_c2
            np.multiply(m, scale, out=num)
            num /= den
            p.data -= num

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Flat view of the moment buffers for serialization, keyed by slot index."""
        out: dict[str, np.ndarray] = {}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m{i}"] = m
            out[f"v{i}"] = v
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step_count: int) -> None:
        for i in range(len(self.params)):
            self.m[i] = np.array(arrays[f"m{i}"], dtype=self.params[i].data.dtype, copy=True)
            self.v[i] = np.array(arrays[f"v{i}"], dtype=self.params[i].data.dtype, copy=True)
        self.step_count = int(step_count)
