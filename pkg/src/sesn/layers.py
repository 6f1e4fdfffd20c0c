"""Parameterized network layers and the loss.

Layouts are channels-last throughout: feature maps are ``(batch, height,
width, channels)`` and convolution kernels are ``(kh, kw, in_channels,
out_channels)``.  Convolutions are stride-1 with "same" zero padding; all
spatial reduction happens in max pooling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, DegenerateVarianceError, InputError, ShapeError
from .tensor import Tensor

PROB_FLOOR = 1e-12


@dataclass
class ConvParams:
    """Weights for a stride-1 "same" 2D convolution."""

    kernel: Tensor
    bias: Optional[Tensor] = None
    stride: int = 1
    padding: str = "same"

    def __post_init__(self):
        kh, kw = self.kernel.shape[0], self.kernel.shape[1]
        if self.kernel.ndim != 4:
            raise ShapeError(f"conv kernel must be rank 4, got shape {self.kernel.shape}")
        if self.stride != 1:
            raise ConfigError("only stride 1 is supported")
        if self.padding != "same":
            raise ConfigError("only 'same' padding is supported")
        if kh % 2 == 0 or kw % 2 == 0:
            raise ConfigError(f"kernel extents must be odd, got ({kh}, {kw})")


@dataclass
class DenseParams:
    """Weights for a fully-connected layer, ``y = x W + b``."""

    weight: Tensor
    bias: Optional[Tensor] = None

    def __post_init__(self):
        if self.weight.ndim != 2:
            raise ShapeError(f"dense weight must be rank 2, got shape {self.weight.shape}")


@dataclass
class BatchNormParams:
    """Per-channel affine normalization parameters and running statistics."""

    gamma: Tensor
    beta: Tensor
    running_mean: Tensor
    running_var: Tensor
    eps: float = 1e-5
    momentum: float = 0.99

    def __post_init__(self):
        if np.any(self.running_var.data <= 0):
            raise ConfigError("running variance must be strictly positive")


def glorot_uniform(shape, fan_in: int, fan_out: int, rng: np.random.Generator,
                   dtype=np.float64) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_conv(kh: int, kw: int, in_channels: int, out_channels: int,
              rng: np.random.Generator, dtype=np.float64) -> ConvParams:
    fan_in = kh * kw * in_channels
    fan_out = kh * kw * out_channels
    kernel = glorot_uniform((kh, kw, in_channels, out_channels), fan_in, fan_out, rng, dtype)
    return ConvParams(kernel=Tensor(kernel, requires_grad=True),
                      bias=Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True))


def init_dense(n_in: int, n_out: int, rng: np.random.Generator,
               dtype=np.float64) -> DenseParams:
    weight = glorot_uniform((n_in, n_out), n_in, n_out, rng, dtype)
    return DenseParams(weight=Tensor(weight, requires_grad=True),
                       bias=Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True))


def init_batchnorm(channels: int, dtype=np.float64) -> BatchNormParams:
    return BatchNormParams(
        gamma=Tensor(np.ones(channels, dtype=dtype), requires_grad=True),
        beta=Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
        running_mean=Tensor(np.zeros(channels, dtype=dtype)),
        running_var=Tensor(np.ones(channels, dtype=dtype)),
    )


def conv2d(x: Tensor, p: ConvParams) -> Tensor:
    """Stride-1 "same" cross-correlation over a BHWC feature map.

    Implemented as one shifted matmul per kernel tap, which keeps the
    accumulation order fixed and the result bitwise reproducible.
    """
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be rank 4, got shape {x.shape}")
    kh, kw, c_in, c_out = p.kernel.shape
    if x.shape[3] != c_in:
        raise ShapeError(f"input has {x.shape[3]} channels but kernel expects {c_in}")
    b, h, w, _ = x.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    xpad = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    out_vals = np.zeros((b, h, w, c_out), dtype=x.data.dtype)
    kern = p.kernel.data
    for di in range(kh):
        for dj in range(kw):
            out_vals += xpad[:, di:di + h, dj:dj + w, :] @ kern[di, dj]
    if p.bias is not None:
        out_vals += p.bias.data
    parents = (x, p.kernel) if p.bias is None else (x, p.kernel, p.bias)
    out = Tensor(out_vals, parents=parents)

    def backward(g):
        if p.bias is not None and p.bias.requires_grad:
            p.bias.accumulate_grad(g.sum(axis=(0, 1, 2)))
        if p.kernel.requires_grad:
            dk = np.zeros_like(kern)
            for di in range(kh):
                for dj in range(kw):
                    dk[di, dj] = np.tensordot(xpad[:, di:di + h, dj:dj + w, :], g,
                                              axes=([0, 1, 2], [0, 1, 2]))
            p.kernel.accumulate_grad(dk)
        if x.requires_grad:
            dxpad = np.zeros_like(xpad)
            for di in range(kh):
                for dj in range(kw):
                    dxpad[:, di:di + h, dj:dj + w, :] += g @ kern[di, dj].T
            x.accumulate_grad(dxpad[:, ph:ph + h, pw:pw + w, :])

    out._backward_fn = backward if out.requires_grad else None
    return out


def dense(x: Tensor, p: DenseParams) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"dense input must be rank 2, got shape {x.shape}")
    if x.shape[1] != p.weight.shape[0]:
        raise ShapeError(f"input width {x.shape[1]} does not match weight rows {p.weight.shape[0]}")
    out_vals = x.data @ p.weight.data
    if p.bias is not None:
        out_vals = out_vals + p.bias.data
    parents = (x, p.weight) if p.bias is None else (x, p.weight, p.bias)
    out = Tensor(out_vals, parents=parents)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g @ p.weight.data.T)
        if p.weight.requires_grad:
            p.weight.accumulate_grad(x.data.T @ g)
        if p.bias is not None and p.bias.requires_grad:
            p.bias.accumulate_grad(g.sum(axis=0))

    out._backward_fn = backward if out.requires_grad else None
    return out


def batchnorm(x: Tensor, p: BatchNormParams, training: bool) -> Tensor:
    """Normalize over every axis except channels (the last one).

    Training mode uses batch statistics and folds them into the running
    estimates with exponential smoothing; inference uses the running
    estimates only and mutates nothing.
    """
    channels = x.shape[-1]
    if p.gamma.shape != (channels,):
        raise ShapeError(f"batchnorm expects {p.gamma.shape[0]} channels, input has {channels}")
    axes = tuple(range(x.ndim - 1))
    gamma, beta = p.gamma, p.beta
    if training:
        if x.shape[0] == 1:
            raise DegenerateVarianceError("cannot estimate batch statistics from a batch of size 1")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        m = p.momentum
        p.running_mean.data = m * p.running_mean.data + (1.0 - m) * mean
        p.running_var.data = m * p.running_var.data + (1.0 - m) * var
    else:
        mean = p.running_mean.data
        var = p.running_var.data
    inv_std = 1.0 / np.sqrt(var + p.eps)
    xhat = (x.data - mean) * inv_std
    out = Tensor(xhat * gamma.data + beta.data, parents=(x, gamma, beta))

    def backward(g):
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta.accumulate_grad(g.sum(axis=axes))
        if x.requires_grad:
            if training:
                n = x.data.size // channels
                g_mean = g.sum(axis=axes) / n
                gx_mean = (g * xhat).sum(axis=axes) / n
                x.accumulate_grad(gamma.data * inv_std * (g - g_mean - xhat * gx_mean))
            else:
                x.accumulate_grad(g * gamma.data * inv_std)

    out._backward_fn = backward if out.requires_grad else None
    return out


def maxpool2d(x: Tensor, pool: tuple) -> Tensor:
    """Non-overlapping max pooling; spatial extents must divide evenly.

    The backward pass routes each output gradient to a single input
    position (the first argmax on ties), so gradient mass is conserved.
    """
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d input must be rank 4, got shape {x.shape}")
    ph, pw = pool
    b, h, w, c = x.shape
    if h % ph != 0 or w % pw != 0:
        raise ShapeError(f"spatial extents {h}x{w} not divisible by pool {ph}x{pw}")
    hp, wp = h // ph, w // pw
    windows = (x.data.reshape(b, hp, ph, wp, pw, c)
               .transpose(0, 1, 3, 5, 2, 4)
               .reshape(b, hp, wp, c, ph * pw))
    idx = windows.argmax(axis=-1)
    out_vals = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    out = Tensor(out_vals, parents=(x,))

    def backward(g):
        dwin = np.zeros_like(windows)
        np.put_along_axis(dwin, idx[..., None], g[..., None], axis=-1)
        dx = (dwin.reshape(b, hp, wp, c, ph, pw)
              .transpose(0, 1, 4, 2, 5, 3)
              .reshape(b, h, w, c))
        x.accumulate_grad(dx)

    out._backward_fn = backward if out.requires_grad else None
    return out


def global_average_pool(x: Tensor) -> Tensor:
    """Mean over both spatial axes, keeping a B x 1 x 1 x C shape."""
    if x.ndim != 4:
        raise ShapeError(f"global_average_pool input must be rank 4, got shape {x.shape}")
    b, h, w, c = x.shape
    out = Tensor(x.data.mean(axis=(1, 2), keepdims=True), parents=(x,))

    def backward(g):
        x.accumulate_grad(np.broadcast_to(g / (h * w), x.shape).copy())

    out._backward_fn = backward if out.requires_grad else None
    return out


def dropout(x: Tensor, rate: float, training: bool,
            rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout: survivors are rescaled so inference is the identity."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise InputError("training-mode dropout requires an rng")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    keep = keep.astype(x.data.dtype)
    out = Tensor(x.data * keep, parents=(x,))

    def backward(g):
        x.accumulate_grad(g * keep)

    out._backward_fn = backward if out.requires_grad else None
    return out


def cross_entropy(probs: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of one-hot labels under given probabilities.

    When ``probs`` came straight out of :func:`sesn.tensor.softmax`, the
    gradient is fused through it as ``(p - y) / batch`` for numerical
    stability; otherwise the gradient falls on ``probs`` directly.
    """
    y = labels.data if isinstance(labels, Tensor) else np.asarray(labels, dtype=probs.data.dtype)
    if probs.ndim != 2 or y.shape != probs.shape:
        raise ShapeError(f"expected matching B x K shapes, got {probs.shape} and {y.shape}")
    if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=1) == 1)):
        raise InputError("labels must be one-hot rows")
    batch = probs.shape[0]
    p = probs.data
    picked = np.clip((p * y).sum(axis=1), PROB_FLOOR, 1.0)
    loss_val = -np.log(picked).mean()
    src = probs._softmax_src
    if src is not None:
        out = Tensor(np.asarray(loss_val, dtype=p.dtype), parents=(src,))

        def backward(g):
            src.accumulate_grad(g * (p - y) / batch)
    else:
        out = Tensor(np.asarray(loss_val, dtype=p.dtype), parents=(probs,))

        def backward(g):
            dp = np.where((y > 0) & (p > PROB_FLOOR), -y / np.maximum(p, PROB_FLOOR), 0.0)
            probs.accumulate_grad(g * dp / batch)

    out._backward_fn = backward if out.requires_grad else None
    return out
