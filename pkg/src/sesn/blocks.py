"""Squeeze-excitation recalibration and the six residual block wirings.

Three recalibration functions operate on a BHWC feature map ``u``:

* :func:`cse` squeezes spatially (global average pooling) and excites
  channel-wise through a two-layer bottleneck with sigmoid gates.
* :func:`sse` squeezes channel-wise (a single 1x1 filter) and excites
  spatially with per-location sigmoid gates.
* :func:`scse` adds both recalibrations of the same input.

A residual block combines a two-conv branch F, a 1x1 projection shortcut g
(so channel counts always line up), and one of six arrangements of ELU and
the scSE recalibration selected by :class:`BlockKind`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError
from .layers import (BatchNormParams, ConvParams, DenseParams, batchnorm,
                     conv2d, dense, global_average_pool, init_batchnorm,
                     init_conv, init_dense)
from .tensor import Tensor, elu, relu, sigmoid


class BlockKind(enum.Enum):
    """The six residual arrangements; values are the on-disk config names."""

    CONV_RESIDUAL = "conv_residual"
    CONV_POST = "conv_post"
    CONV_POST_ELU = "conv_post_elu"
    CONV_STANDARD = "conv_standard"
    CONV_STANDARD_POST = "conv_standard_post"
    CONV_STANDARD_POST_ELU = "conv_standard_post_elu"

    @classmethod
    def from_name(cls, name: str) -> "BlockKind":
        for kind in cls:
            if kind.value == name:
                return kind
        valid = ", ".join(k.value for k in cls)
        raise ConfigError(f"unknown block kind {name!r}; valid kinds: {valid}")


@dataclass
class SeParams:
    """Parameters for the three recalibration functions on a C-channel map.

    The channel bottleneck reduces C to C/ratio and expands back; the
    spatial squeeze is one 1x1 convolution filter.
    """

    ratio: int
    reduce: DenseParams
    expand: DenseParams
    spatial: ConvParams

    def __post_init__(self):
        channels = self.reduce.weight.shape[0]
        if self.ratio < 1 or channels % self.ratio != 0:
            raise ConfigError(f"channel count {channels} is not divisible by ratio {self.ratio}")
        if self.spatial.kernel.shape != (1, 1, channels, 1):
            raise ConfigError(
                f"spatial squeeze kernel must be (1, 1, {channels}, 1), "
                f"got {self.spatial.kernel.shape}")

    @property
    def channels(self) -> int:
        return self.reduce.weight.shape[0]


def init_se(channels: int, ratio: int, rng: np.random.Generator,
            dtype=np.float64) -> SeParams:
    if ratio < 1 or channels % ratio != 0:
        raise ConfigError(f"channel count {channels} is not divisible by ratio {ratio}")
    hidden = channels // ratio
    return SeParams(
        ratio=ratio,
        reduce=init_dense(channels, hidden, rng, dtype),
        expand=init_dense(hidden, channels, rng, dtype),
        spatial=init_conv(1, 1, channels, 1, rng, dtype),
    )


def _channel_gates(u: Tensor, p: SeParams) -> Tensor:
    """Per-channel sigmoid gates from the pooled summary, shape B x 1 x 1 x C."""
    b = u.shape[0]
    z = global_average_pool(u).reshape(b, p.channels)
    hidden = relu(dense(z, p.reduce))
    gates = sigmoid(dense(hidden, p.expand))
    return gates.reshape(b, 1, 1, p.channels)


def cse(u: Tensor, p: SeParams) -> Tensor:
    """Channel excitation: scale every channel map by its pooled gate."""
    if u.shape[-1] != p.channels:
        raise ConfigError(f"input has {u.shape[-1]} channels, parameters expect {p.channels}")
    return u * _channel_gates(u, p)


def sse(u: Tensor, p: SeParams) -> Tensor:
    """Spatial excitation: scale every location by its channel-mix gate."""
    if u.shape[-1] != p.channels:
        raise ConfigError(f"input has {u.shape[-1]} channels, parameters expect {p.channels}")
    gates = sigmoid(conv2d(u, p.spatial))
    return u * gates


def scse(u: Tensor, p: SeParams) -> Tensor:
    """Sum of channel and spatial recalibrations of the same input."""
    return cse(u, p) + sse(u, p)


@dataclass
class BlockSpec:
    """One residual block: branch F, projection shortcut g, SE parameters."""

    kind: BlockKind
    filters: int
    ratio: int
    conv1: ConvParams
    bn1: BatchNormParams
    conv2: ConvParams
    bn2: BatchNormParams
    shortcut_conv: ConvParams
    shortcut_bn: BatchNormParams
    se: SeParams

    def __post_init__(self):
        sc = self.shortcut_conv.kernel.shape
        if sc[0] != 1 or sc[1] != 1 or sc[3] != self.filters:
            raise ConfigError(f"shortcut must be a (1,1) conv with {self.filters} filters, got {sc}")


def init_block(kind: BlockKind, in_channels: int, filters: int, ratio: int,
               rng: np.random.Generator, dtype=np.float64) -> BlockSpec:
    return BlockSpec(
        kind=kind,
        filters=filters,
        ratio=ratio,
        conv1=init_conv(3, 3, in_channels, filters, rng, dtype),
        bn1=init_batchnorm(filters, dtype),
        conv2=init_conv(3, 3, filters, filters, rng, dtype),
        bn2=init_batchnorm(filters, dtype),
        shortcut_conv=init_conv(1, 1, in_channels, filters, rng, dtype),
        shortcut_bn=init_batchnorm(filters, dtype),
        se=init_se(filters, ratio, rng, dtype),
    )


def residual_branch(x: Tensor, spec: BlockSpec, training: bool = False) -> Tensor:
    """The two-conv branch F: conv3x3 -> BN -> ELU -> conv3x3 -> BN.

    No activation after the second BN; the block equation decides where
    activations go.
    """
    h = elu(batchnorm(conv2d(x, spec.conv1), spec.bn1, training))
    return batchnorm(conv2d(h, spec.conv2), spec.bn2, training)


def shortcut(x: Tensor, spec: BlockSpec, training: bool = False) -> Tensor:
    """The projection shortcut g: conv1x1 -> BN, matching F's output shape."""
    return batchnorm(conv2d(x, spec.shortcut_conv), spec.shortcut_bn, training)


def block_forward(x: Tensor, spec: BlockSpec, training: bool = False,
                  se_fn: Optional[Callable[[Tensor], Tensor]] = None) -> Tensor:
    """Run one residual block according to its kind.

    With H(X) = F(X) + g(X) and R the ELU activation, the six kinds are

        conv_residual            R(H(X))
        conv_post                SE(H(X))
        conv_post_elu            SE(R(H(X)))
        conv_standard            SE(F(X)) + g(X)
        conv_standard_post       SE(H(X)) + g(X)
        conv_standard_post_elu   R(SE(H(X)) + g(X))

    where SE is scSE by default; tests may pass ``se_fn`` (e.g. the
    identity) to probe the wiring in isolation.  The same g parameters are
    shared wherever g appears inside one block.
    """
    se = se_fn if se_fn is not None else (lambda t: scse(t, spec.se))
    f_out = residual_branch(x, spec, training)
    g_out = shortcut(x, spec, training)
    kind = spec.kind
    if kind is BlockKind.CONV_STANDARD:
        return se(f_out) + g_out
    h_out = f_out + g_out
    if kind is BlockKind.CONV_RESIDUAL:
        return elu(h_out)
    if kind is BlockKind.CONV_POST:
        return se(h_out)
    if kind is BlockKind.CONV_POST_ELU:
        return se(elu(h_out))
    if kind is BlockKind.CONV_STANDARD_POST:
        return se(h_out) + g_out
    if kind is BlockKind.CONV_STANDARD_POST_ELU:
        return elu(se(h_out) + g_out)
    raise ConfigError(f"unknown block kind {kind!r}")


def block_arrays(spec: BlockSpec, prefix: str) -> dict:
    """Named parameter arrays of one block, in a stable order."""
    return {
        f"{prefix}.branch.conv1.kernel": spec.conv1.kernel,
        f"{prefix}.branch.conv1.bias": spec.conv1.bias,
        f"{prefix}.branch.bn1.gamma": spec.bn1.gamma,
        f"{prefix}.branch.bn1.beta": spec.bn1.beta,
        f"{prefix}.branch.bn1.running_mean": spec.bn1.running_mean,
        f"{prefix}.branch.bn1.running_var": spec.bn1.running_var,
        f"{prefix}.branch.conv2.kernel": spec.conv2.kernel,
        f"{prefix}.branch.conv2.bias": spec.conv2.bias,
        f"{prefix}.branch.bn2.gamma": spec.bn2.gamma,
        f"{prefix}.branch.bn2.beta": spec.bn2.beta,
        f"{prefix}.branch.bn2.running_mean": spec.bn2.running_mean,
        f"{prefix}.branch.bn2.running_var": spec.bn2.running_var,
        f"{prefix}.shortcut.conv.kernel": spec.shortcut_conv.kernel,
        f"{prefix}.shortcut.conv.bias": spec.shortcut_conv.bias,
        f"{prefix}.shortcut.bn.gamma": spec.shortcut_bn.gamma,
        f"{prefix}.shortcut.bn.beta": spec.shortcut_bn.beta,
        f"{prefix}.shortcut.bn.running_mean": spec.shortcut_bn.running_mean,
        f"{prefix}.shortcut.bn.running_var": spec.shortcut_bn.running_var,
        f"{prefix}.se.reduce.weight": spec.se.reduce.weight,
        f"{prefix}.se.reduce.bias": spec.se.reduce.bias,
        f"{prefix}.se.expand.weight": spec.se.expand.weight,
        f"{prefix}.se.expand.bias": spec.se.expand.bias,
        f"{prefix}.se.spatial.kernel": spec.se.spatial.kernel,
        f"{prefix}.se.spatial.bias": spec.se.spatial.bias,
    }
