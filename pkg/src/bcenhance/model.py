"""Generator and discriminator assemblies.

The generator maps a [24 x T] mel-cepstral feature matrix to another
[24 x T] matrix through a gated-convolution encoder (two stride-2
downsamples), six residual converter blocks, and a decoder whose two
upsample stages each shuffle channels into doubled time resolution before a
gated convolution. T must be divisible by 4 so the strides invert cleanly.

Discriminators treat the feature matrix as a single-channel 24 x T image
and share one gated 2-D trunk. The classification head pools over time and
applies a fully connected layer to one logit; the defect head applies a
1x1 convolution to emit a grid of local patch logits whose sigmoids are
averaged into the reported score.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from bcenhance.errors import ConfigError, DataError, DimensionError
from bcenhance.nn import tensor as ops
from bcenhance.nn.layers import Conv1d, Conv2d, GatedConv1d, GatedConv2d, NamedParams, ResidualBlock
from bcenhance.nn.tensor import Tensor

FEATURE_DIM = 24
# Product of the encoder's time strides; generator inputs must divide by it.
TIME_DIVISOR = 4
# Product of the discriminator trunk's time strides; inputs shorter than
# this would collapse before the last stage sees a full stride step.
MIN_DISC_FRAMES = 16
SHUFFLE_FACTOR = 2
RESIDUAL_BLOCKS = 6

CLASSIFICATION = "classification"
DEFECT = "defect"


@dataclass
class Generator:
    in_conv: GatedConv1d  # 24 -> 128, k 15
    down1: GatedConv1d  # 128 -> 256, k 5, stride 2
    down2: GatedConv1d  # 256 -> 512, k 5, stride 2
    blocks: list[ResidualBlock]  # 6 x (512 -> 1024 -> 512, k 3)
    up1: GatedConv1d  # shuffle to 256, conv -> 1024, k 5
    up2: GatedConv1d  # shuffle to 512, conv -> 512, k 5
    out_conv: Conv1d  # 512 -> 24, k 15

    @classmethod
    def build(cls, seed: int, dtype=np.float32) -> "Generator":
        rng = np.random.default_rng(seed)
        return cls(
            in_conv=GatedConv1d.build(rng, FEATURE_DIM, 128, 15, 1, normalized=False, dtype=dtype),
            down1=GatedConv1d.build(rng, 128, 256, 5, 2, dtype=dtype),
            down2=GatedConv1d.build(rng, 256, 512, 5, 2, dtype=dtype),
            blocks=[ResidualBlock.build(rng, 512, 1024, 3, dtype=dtype) for _ in range(RESIDUAL_BLOCKS)],
            up1=GatedConv1d.build(rng, 512 // SHUFFLE_FACTOR, 1024, 5, 1, dtype=dtype),
            up2=GatedConv1d.build(rng, 1024 // SHUFFLE_FACTOR, 512, 5, 1, dtype=dtype),
            out_conv=Conv1d.build(rng, 512, FEATURE_DIM, 15, 1, dtype=dtype),
        )

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.ndim != 2 or x.data.shape[0] != FEATURE_DIM:
            raise DimensionError(f"generator expects [{FEATURE_DIM} x T] features, got shape {x.data.shape}")
        if x.data.shape[1] % TIME_DIVISOR != 0:
            raise DimensionError(
                f"generator needs frame count divisible by {TIME_DIVISOR}, got {x.data.shape[1]}"
            )
        h = self.in_conv(x)
        h = self.down1(h)
        h = self.down2(h)
        for block in self.blocks:
            h = block(h)
        h = self.up1(ops.shuffle1d(h, SHUFFLE_FACTOR))
        h = self.up2(ops.shuffle1d(h, SHUFFLE_FACTOR))
        return self.out_conv(h)

    def named_parameters(self, prefix: str = "") -> NamedParams:
        yield from self.in_conv.named_parameters(prefix + "in_conv.")
        yield from self.down1.named_parameters(prefix + "down1.")
        yield from self.down2.named_parameters(prefix + "down2.")
        for i, block in enumerate(self.blocks):
            yield from block.named_parameters(prefix + f"res{i}.")
        yield from self.up1.named_parameters(prefix + "up1.")
        yield from self.up2.named_parameters(prefix + "up2.")
        yield from self.out_conv.named_parameters(prefix + "out_conv.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]


@dataclass
class DiscOutput:
    """One discriminator pass: raw logits, their sigmoids, and the scalar score."""

    logits: Tensor
    scores: Tensor
    score: Tensor  # mean of scores; strictly in (0, 1)


@dataclass
class Discriminator:
    kind: str
    in_conv: GatedConv2d  # 1 -> 128, 3x3, stride (1, 2)
    down1: GatedConv2d  # 128 -> 256, 3x3, stride (2, 2)
    down2: GatedConv2d  # 256 -> 512, 3x3, stride (2, 2)
    down3: GatedConv2d  # 512 -> 1024, 6x3, stride (1, 2)
    fc_weight: Tensor | None = None  # [1024 * 6] for the fully connected head
    fc_bias: Tensor | None = None  # scalar
    patch_conv: Conv2d | None = None  # 1024 -> 1, 1x1 for the patch head

    # Feature rows after the trunk: 24 -> 24 -> 12 -> 6 -> 6.
    TRUNK_ROWS = 6
    TRUNK_CHANNELS = 1024

    @classmethod
    def build(cls, kind: str, seed: int, dtype=np.float32, patch_head: bool | None = None) -> "Discriminator":
        """Construct a discriminator of the given kind.

        ``patch_head`` defaults to True for the defect kind and False for
        classification; passing False for defect yields two architecturally
        identical discriminators.
        """
        if kind not in (CLASSIFICATION, DEFECT):
            raise ConfigError(f"unknown discriminator kind {kind!r}")
        if patch_head is None:
            patch_head = kind == DEFECT
        if kind == CLASSIFICATION and patch_head:
            raise ConfigError("classification discriminator uses the fully connected head")
        rng = np.random.default_rng(seed)
        disc = cls(
            kind=kind,
            in_conv=GatedConv2d.build(rng, 1, 128, (3, 3), (1, 2), normalized=False, dtype=dtype),
            down1=GatedConv2d.build(rng, 128, 256, (3, 3), (2, 2), dtype=dtype),
            down2=GatedConv2d.build(rng, 256, 512, (3, 3), (2, 2), dtype=dtype),
            down3=GatedConv2d.build(rng, 512, 1024, (6, 3), (1, 2), dtype=dtype),
        )
        if patch_head:
            disc.patch_conv = Conv2d.build(rng, cls.TRUNK_CHANNELS, 1, (1, 1), (1, 1), dtype=dtype)
        else:
            fan_in = cls.TRUNK_CHANNELS * cls.TRUNK_ROWS
            disc.fc_weight = Tensor(
                (rng.standard_normal(fan_in) * np.sqrt(2.0 / fan_in)).astype(dtype), requires_grad=True
            )
            disc.fc_bias = Tensor(np.zeros((), dtype=dtype), requires_grad=True)
        return disc

    def __call__(self, x: Tensor) -> DiscOutput:
        if x.data.ndim != 2 or x.data.shape[0] != FEATURE_DIM:
            raise DimensionError(f"discriminator expects [{FEATURE_DIM} x T] features, got shape {x.data.shape}")
        t = x.data.shape[1]
        if t < MIN_DISC_FRAMES:
            raise DimensionError(f"discriminator needs at least {MIN_DISC_FRAMES} frames, got {t}")
        h = ops.reshape(x, (1, FEATURE_DIM, t))
        h = self.in_conv(h)
        h = self.down1(h)
        h = self.down2(h)
        h = self.down3(h)
        if self.patch_conv is not None:
            grid = self.patch_conv(h)  # [1, 6, T/16]
            logits = ops.reshape(grid, (grid.data.shape[1] * grid.data.shape[2],))
        else:
            pooled = ops.mean(h, axis=2)  # [1024, 6]
            flat = ops.reshape(pooled, (self.TRUNK_CHANNELS * self.TRUNK_ROWS,))
            logit = ops.add(ops.dot(flat, self.fc_weight), self.fc_bias)
            logits = ops.reshape(logit, (1,))
        scores = ops.sigmoid(logits)
        return DiscOutput(logits=logits, scores=scores, score=ops.mean(scores))

    def named_parameters(self, prefix: str = "") -> NamedParams:
        yield from self.in_conv.named_parameters(prefix + "in_conv.")
        yield from self.down1.named_parameters(prefix + "down1.")
        yield from self.down2.named_parameters(prefix + "down2.")
        yield from self.down3.named_parameters(prefix + "down3.")
        if self.patch_conv is not None:
            yield from self.patch_conv.named_parameters(prefix + "patch_conv.")
        if self.fc_weight is not None:
            yield prefix + "fc_weight", self.fc_weight
            yield prefix + "fc_bias", self.fc_bias

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]


def build_generator(seed: int, dtype=np.float32) -> Generator:
    return Generator.build(seed, dtype)


def build_discriminator(kind: str, seed: int, dtype=np.float32, patch_head: bool | None = None) -> Discriminator:
    return Discriminator.build(kind, seed, dtype, patch_head)


def _fmt_kernel_1d(k: int) -> str:
    return f"1x{k}"


def _row(kernel: str, stride: str, channels: int) -> tuple[str, str, str]:
    return kernel, stride, str(channels)


def generator_layout(g: Generator) -> list[tuple[str, str, str]]:
    """(kernel, stride, channels) per layer, read off the built tensors."""
    rows = []

    def conv_row(conv: Conv1d):
        cout, _, k = conv.weight.data.shape
        return _row(_fmt_kernel_1d(k), f"1x{conv.stride}", cout)

    rows.append(conv_row(g.in_conv.linear))
    rows.append(conv_row(g.down1.linear))
    rows.append(conv_row(g.down2.linear))
    # All residual blocks share one structure; report the two convs of the first.
    rows.append(conv_row(g.blocks[0].conv1))
    rows.append(conv_row(g.blocks[0].conv2))
    rows.append(conv_row(g.up1.linear))
    rows.append(conv_row(g.up2.linear))
    rows.append(conv_row(g.out_conv))
    return rows


def discriminator_layout(d: Discriminator) -> list[tuple[str, str, str]]:
    rows = []
    for conv2d_block in (d.in_conv, d.down1, d.down2, d.down3):
        conv = conv2d_block.linear
        cout, _, kh, kw = conv.weight.data.shape
        sh, sw = conv.stride
        rows.append(_row(f"{kh}x{kw}", f"{sh}x{sw}", cout))
    return rows


# --------------------------------------------------------------------------
# Checkpoint container
#
# Byte layout (all integers little-endian):
#   bytes 0-3    magic b"BCCK"
#   bytes 4-7    format version, uint32 (currently 1)
#   bytes 8-15   header length H, uint64
#   bytes 16-    UTF-8 JSON header of H bytes with keys:
#                  config_hash: str, iteration: int, meta: object,
#                  arrays: [{name, dtype, shape}, ...]
#   then each array's raw C-order bytes, in the order listed in `arrays`.

CHECKPOINT_MAGIC = b"BCCK"
CHECKPOINT_VERSION = 1


def save_container(path, config_hash: str, iteration: int, meta: dict, arrays: dict) -> None:
    """Write a checkpoint container atomically (temp file + rename)."""
    entries = []
    blobs = []
    for name, value in arrays.items():
        arr = np.asarray(value)
        # ascontiguousarray promotes 0-d to 1-d; reshape restores the rank.
        arr = np.ascontiguousarray(arr).reshape(arr.shape)
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        entries.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = json.dumps(
        {
            "config_hash": config_hash,
            "iteration": int(iteration),
            "meta": meta,
            "arrays": entries,
        },
        sort_keys=True,
    ).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)


def load_container(path):
    """Read a checkpoint container -> (config_hash, iteration, meta, arrays)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a checkpoint container (bad magic)")
    version, header_len = struct.unpack_from("<IQ", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    start = 16
    try:
        header = json.loads(raw[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt checkpoint header: {exc}") from exc
    offset = start + header_len
    arrays = {}
    for entry in header["arrays"]:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64)) if shape else dtype.itemsize
        chunk = raw[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise DataError(f"{path}: truncated checkpoint (array {entry['name']!r})")
        arrays[entry["name"]] = np.frombuffer(chunk, dtype=dtype).reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise DataError(f"{path}: {len(raw) - offset} trailing bytes after last array")
    return header["config_hash"], int(header["iteration"]), header["meta"], arrays
