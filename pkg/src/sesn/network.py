"""Full classifier: three residual SE blocks with pooling and a dense head.

The default configuration is the reference architecture: blocks of 32, 64
and 128 filters (ratio 2) with (2,10), (2,5), (2,5) max pooling and 0.3
dropout after each, then Dense(100) + BN + ELU, Dropout(0.4), Dense(10) +
BN + softmax on a 64 x 500 x 3 input.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .blocks import BlockKind, BlockSpec, block_arrays, block_forward, init_block
from .errors import ConfigError, InputError, ParseError
from .layers import (BatchNormParams, DenseParams, batchnorm, dense, dropout,
                     init_batchnorm, init_dense, maxpool2d)
from .tensor import Tensor, elu, flatten, softmax

CONFIG_KEYS = ("block_kind", "filters", "ratio", "pool_h", "pool_w", "dropout",
               "dense_units", "num_classes", "mels", "frames", "channels")


@dataclass(frozen=True)
class BlockConfig:
    filters: int
    ratio: int
    pool: tuple
    dropout: float


@dataclass(frozen=True)
class NetworkConfig:
    block_kind: BlockKind = BlockKind.CONV_STANDARD_POST
    blocks: tuple = (
        BlockConfig(32, 2, (2, 10), 0.3),
        BlockConfig(64, 2, (2, 5), 0.3),
        BlockConfig(128, 2, (2, 5), 0.3),
    )
    dense_units: int = 100
    head_dropout: float = 0.4
    num_classes: int = 10
    input_shape: tuple = (64, 500, 3)

    def validate(self) -> None:
        h, w, _ = self.input_shape
        for i, blk in enumerate(self.blocks, start=1):
            if blk.filters % blk.ratio != 0:
                raise ConfigError(
                    f"block {i}: filters {blk.filters} not divisible by ratio {blk.ratio}")
            ph, pw = blk.pool
            if h % ph != 0 or w % pw != 0:
                raise ConfigError(
                    f"block {i}: pooling ({ph},{pw}) does not divide spatial extents {h}x{w}")
            h, w = h // ph, w // pw

    def flat_width(self) -> int:
        """Width of the flattened feature vector feeding the dense head."""
        h, w, _ = self.input_shape
        for blk in self.blocks:
            h, w = h // blk.pool[0], w // blk.pool[1]
        return h * w * self.blocks[-1].filters

    def shape_ladder(self) -> list:
        """BHWC shapes after each block and each pooling stage."""
        h, w, _ = self.input_shape
        ladder = []
        for blk in self.blocks:
            ladder.append((h, w, blk.filters))
            h, w = h // blk.pool[0], w // blk.pool[1]
            ladder.append((h, w, blk.filters))
        return ladder


def _parse_int_list(value: str) -> list:
    return [int(v.strip()) for v in value.split(",")]


def _parse_float_list(value: str) -> list:
    return [float(v.strip()) for v in value.split(",")]


def parse_network_config(text: str, source: str = "<config>") -> NetworkConfig:
    """Read a key=value network description.

    List-valued keys (filters, pool_h, pool_w, dropout) are comma-separated;
    ``dropout`` carries one rate per block plus a final entry for the head.
    """
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ParseError(f"{source} line {lineno}: expected 'key = value', got {stripped!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key not in CONFIG_KEYS:
            raise ParseError(f"{source} line {lineno}: unknown key {key!r}")
        raw[key] = value.strip()
    missing = [k for k in CONFIG_KEYS if k not in raw]
    if missing:
        raise ParseError(f"{source}: missing keys: {', '.join(missing)}")
    try:
        kind = BlockKind.from_name(raw["block_kind"])
        filters = _parse_int_list(raw["filters"])
        ratio = int(raw["ratio"])
        pool_h = _parse_int_list(raw["pool_h"])
        pool_w = _parse_int_list(raw["pool_w"])
        drops = _parse_float_list(raw["dropout"])
        dense_units = int(raw["dense_units"])
        num_classes = int(raw["num_classes"])
        input_shape = (int(raw["mels"]), int(raw["frames"]), int(raw["channels"]))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ParseError(f"{source}: {exc}") from None
    n = len(filters)
    if len(pool_h) != n or len(pool_w) != n:
        raise ParseError(f"{source}: filters, pool_h and pool_w must have equal lengths")
    if len(drops) != n + 1:
        raise ParseError(f"{source}: dropout needs {n + 1} entries "
                         f"(one per block plus the head), got {len(drops)}")
    blocks = tuple(BlockConfig(f, ratio, (ph, pw), d)
                   for f, ph, pw, d in zip(filters, pool_h, pool_w, drops[:-1]))
    cfg = NetworkConfig(block_kind=kind, blocks=blocks, dense_units=dense_units,
                        head_dropout=drops[-1], num_classes=num_classes,
                        input_shape=input_shape)
    cfg.validate()
    return cfg


def load_network_config(path) -> NetworkConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_network_config(fh.read(), source=str(path))


def format_network_config(cfg: NetworkConfig) -> str:
    drops = [str(b.dropout) for b in cfg.blocks] + [str(cfg.head_dropout)]
    lines = [
        f"block_kind = {cfg.block_kind.value}",
        f"filters = {','.join(str(b.filters) for b in cfg.blocks)}",
        f"ratio = {cfg.blocks[0].ratio}",
        f"pool_h = {','.join(str(b.pool[0]) for b in cfg.blocks)}",
        f"pool_w = {','.join(str(b.pool[1]) for b in cfg.blocks)}",
        f"dropout = {','.join(drops)}",
        f"dense_units = {cfg.dense_units}",
        f"num_classes = {cfg.num_classes}",
        f"mels = {cfg.input_shape[0]}",
        f"frames = {cfg.input_shape[1]}",
        f"channels = {cfg.input_shape[2]}",
    ]
    return "\n".join(lines) + "\n"


def save_network_config(path, cfg: NetworkConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_network_config(cfg))


class Model:
    """A built network: configuration plus every parameter tensor."""

    def __init__(self, cfg: NetworkConfig, blocks: Sequence[BlockSpec],
                 head_dense1: DenseParams, head_bn1: BatchNormParams,
                 head_dense2: DenseParams, head_bn2: BatchNormParams):
        self.cfg = cfg
        self.blocks = list(blocks)
        self.head_dense1 = head_dense1
        self.head_bn1 = head_bn1
        self.head_dense2 = head_dense2
        self.head_bn2 = head_bn2

    def named_arrays(self) -> "OrderedDict[str, Tensor]":
        """Every array in checkpoint order: blocks, then the dense head."""
        out: OrderedDict[str, Tensor] = OrderedDict()
        for i, spec in enumerate(self.blocks, start=1):
            out.update(block_arrays(spec, f"block{i}"))
        out.update({
            "head.dense1.weight": self.head_dense1.weight,
            "head.dense1.bias": self.head_dense1.bias,
            "head.bn1.gamma": self.head_bn1.gamma,
            "head.bn1.beta": self.head_bn1.beta,
            "head.bn1.running_mean": self.head_bn1.running_mean,
            "head.bn1.running_var": self.head_bn1.running_var,
            "head.dense2.weight": self.head_dense2.weight,
            "head.dense2.bias": self.head_dense2.bias,
            "head.bn2.gamma": self.head_bn2.gamma,
            "head.bn2.beta": self.head_bn2.beta,
            "head.bn2.running_mean": self.head_bn2.running_mean,
            "head.bn2.running_var": self.head_bn2.running_var,
        })
        return out

    def trainable_arrays(self) -> "OrderedDict[str, Tensor]":
        return OrderedDict((k, t) for k, t in self.named_arrays().items()
                           if t.requires_grad)

    def parameter_count(self, trainable_only: bool = True) -> int:
        arrays = self.trainable_arrays() if trainable_only else self.named_arrays()
        return sum(t.data.size for t in arrays.values())

    def state_snapshot(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, t.data.copy()) for k, t in self.named_arrays().items())

    def load_state(self, arrays) -> None:
        own = self.named_arrays()
        for name, tensor in own.items():
            if name not in arrays:
                raise InputError(f"checkpoint is missing array {name!r}")
            incoming = np.asarray(arrays[name])
            if incoming.shape != tensor.data.shape:
                raise InputError(f"array {name!r} has shape {incoming.shape}, "
                                 f"model expects {tensor.data.shape}")
            tensor.data = incoming.astype(tensor.data.dtype).copy()

    def forward(self, batch: Tensor, training: bool = False,
                rng: Optional[np.random.Generator] = None) -> Tensor:
        """Map a B x mels x frames x channels batch to class probabilities."""
        if batch.ndim != 4 or batch.shape[1:] != self.cfg.input_shape:
            raise InputError(f"batch shape {batch.shape} does not match "
                             f"configured input {self.cfg.input_shape}")
        x = batch
        for spec, blk_cfg in zip(self.blocks, self.cfg.blocks):
            x = block_forward(x, spec, training)
            x = maxpool2d(x, blk_cfg.pool)
            x = dropout(x, blk_cfg.dropout, training, rng)
        x = flatten(x)
        x = elu(batchnorm(dense(x, self.head_dense1), self.head_bn1, training))
        x = dropout(x, self.cfg.head_dropout, training, rng)
        x = batchnorm(dense(x, self.head_dense2), self.head_bn2, training)
        return softmax(x)


def build_model(cfg: NetworkConfig, seed: int, dtype=np.float64) -> Model:
    """Initialize all parameters deterministically from ``seed``."""
    cfg.validate()
    rng = np.random.Generator(np.random.PCG64(seed))
    blocks = []
    in_channels = cfg.input_shape[2]
    for blk in cfg.blocks:
        blocks.append(init_block(cfg.block_kind, in_channels, blk.filters,
                                 blk.ratio, rng, dtype))
        in_channels = blk.filters
    flat = cfg.flat_width()
    return Model(
        cfg,
        blocks,
        head_dense1=init_dense(flat, cfg.dense_units, rng, dtype),
        head_bn1=init_batchnorm(cfg.dense_units, dtype),
        head_dense2=init_dense(cfg.dense_units, cfg.num_classes, rng, dtype),
        head_bn2=init_batchnorm(cfg.num_classes, dtype),
    )
