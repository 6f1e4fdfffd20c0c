"""Reverse-mode differentiable tensors.

A ``Tensor`` wraps a NumPy array of rank 0 to 4 and records the operation
that produced it, so a scalar loss can backpropagate through any composition
of the ops defined here and in :mod:`sesn.layers`.  Arithmetic is float64 by
default; float32 is accepted for faster training runs.  Broadcasting is
deliberately limited to size-1 axes of equal-rank operands, which is all the
network needs.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ShapeError

DEFAULT_DTYPE = np.float64
_ALLOWED_DTYPES = (np.float32, np.float64)


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype in _ALLOWED_DTYPES:
        return arr
    return arr.astype(DEFAULT_DTYPE)


class Tensor:
    """A value node in the computation graph.

    ``parents`` and ``backward_fn`` are supplied by ops; user code creates
    leaf tensors with just data and ``requires_grad``.
    """

    def __init__(self, data, requires_grad: bool = False,
                 parents: Sequence["Tensor"] = (),
                 backward_fn: Optional[Callable[[np.ndarray], None]] = None,
                 dtype=None):
        self.data = _as_array(data, dtype)
        if self.data.ndim > 4:
            raise ShapeError(f"rank {self.data.ndim} exceeds the supported maximum of 4")
        if any(n < 1 for n in self.data.shape):
            raise ShapeError(f"all extents must be positive, got shape {self.data.shape}")
        self.grad: Optional[np.ndarray] = None
        self._parents = tuple(parents)
        if self._parents:
            self.requires_grad = any(p.requires_grad for p in self._parents)
        else:
            self.requires_grad = requires_grad
        self._backward_fn = backward_fn if self.requires_grad else None
        # set by softmax() so cross_entropy() can fuse its gradient
        self._softmax_src: Optional[Tensor] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match tensor shape {self.shape}")
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, seed: Optional[np.ndarray] = None) -> None:
        """Backpropagate from this node to every reachable leaf.

        Without an explicit ``seed`` the node must be scalar-like; the seed
        defaults to ones.
        """
        if seed is None:
            seed = np.ones_like(self.data)
        order = self._topo_order()
        self.accumulate_grad(np.asarray(seed, dtype=self.data.dtype))
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    def _topo_order(self) -> list:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return order

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other: "Tensor") -> "Tensor":
        if not isinstance(other, Tensor):
            return NotImplemented
        if self.shape != other.shape:
            raise ShapeError(f"add requires matching shapes, got {self.shape} and {other.shape}")
        out = Tensor(self.data + other.data, parents=(self, other))

        def backward(g):
            self.accumulate_grad(g)
            other.accumulate_grad(g)

        out._backward_fn = backward if out.requires_grad else None
        return out

    def __mul__(self, other: "Tensor") -> "Tensor":
        """Elementwise product; size-1 axes of equal-rank operands broadcast."""
        if not isinstance(other, Tensor):
            return NotImplemented
        if self.ndim != other.ndim:
            raise ShapeError(f"mul requires equal ranks, got {self.shape} and {other.shape}")
        for a, b in zip(self.shape, other.shape):
            if a != b and a != 1 and b != 1:
                raise ShapeError(f"shapes {self.shape} and {other.shape} are not broadcastable")
        out = Tensor(self.data * other.data, parents=(self, other))

        def backward(g):
            self.accumulate_grad(_sum_to_shape(g * other.data, self.shape))
            other.accumulate_grad(_sum_to_shape(g * self.data, other.shape))

        out._backward_fn = backward if out.requires_grad else None
        return out

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = Tensor(self.data.reshape(shape), parents=(self,))
        src_shape = self.shape

        def backward(g):
            self.accumulate_grad(g.reshape(src_shape))

        out._backward_fn = backward if out.requires_grad else None
        return out


def _sum_to_shape(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    axes = tuple(i for i, (got, want) in enumerate(zip(g.shape, shape)) if want == 1 and got != 1)
    return g.sum(axis=axes, keepdims=True)


def flatten(x: Tensor) -> Tensor:
    """Collapse all trailing axes into one, keeping the batch axis.

    Row-major order: height-major, then width, then channels.  Checkpoint
    layouts depend on this ordering.
    """
    batch = x.shape[0]
    return x.reshape(batch, int(np.prod(x.shape[1:])))


# -- activations ----------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0), parents=(x,))

    def backward(g):
        x.accumulate_grad(g * (x.data > 0))

    out._backward_fn = backward if out.requires_grad else None
    return out


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    neg = np.expm1(np.minimum(x.data, 0.0)) * alpha
    vals = np.where(x.data > 0, x.data, neg)
    out = Tensor(vals, parents=(x,))

    def backward(g):
        # derivative is 1 above zero and alpha*exp(x) = y + alpha below
        x.accumulate_grad(g * np.where(x.data > 0, 1.0, vals + alpha))

    out._backward_fn = backward if out.requires_grad else None
    return out


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    vals = np.empty_like(d)
    pos = d >= 0
    vals[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    vals[~pos] = ex / (1.0 + ex)
    out = Tensor(vals, parents=(x,))

    def backward(g):
        x.accumulate_grad(g * vals * (1.0 - vals))

    out._backward_fn = backward if out.requires_grad else None
    return out


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis; rows land on the probability simplex."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    probs = ex / ex.sum(axis=-1, keepdims=True)
    out = Tensor(probs, parents=(x,))

    def backward(g):
        inner = (g * probs).sum(axis=-1, keepdims=True)
        x.accumulate_grad(probs * (g - inner))

    out._backward_fn = backward if out.requires_grad else None
    out._softmax_src = x
    return out
