"""Central finite-difference gradient checking.

The numeric side evaluates the function through plain forward passes only,
so it stays independent of the reverse-mode machinery it is used to verify.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np


def numeric_gradient(f: Callable[[], float], x: np.ndarray, eps: float = 1e-4,
                     indices: Optional[Iterable[tuple]] = None) -> np.ndarray:
    """Central differences of a scalar-valued ``f`` w.r.t. entries of ``x``.

    ``f`` must read ``x`` afresh on every call; ``x`` is perturbed in place
    and restored.  ``indices`` restricts the check to a subset of entries
    (the full gradient is returned with zeros elsewhere).
    """
    grad = np.zeros_like(x)
    if indices is None:
        indices = np.ndindex(*x.shape)
    for idx in indices:
        orig = x[idx]
        x[idx] = orig + eps
        f_plus = f()
        x[idx] = orig - eps
        f_minus = f()
        x[idx] = orig
        grad[idx] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray,
                       indices: Optional[Sequence[tuple]] = None) -> float:
    """Worst-case elementwise error, relative above unit scale."""
    if indices is not None:
        analytic = np.array([analytic[i] for i in indices])
        numeric = np.array([numeric[i] for i in indices])
    denom = np.maximum(1.0, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))


def sample_indices(shape: tuple, count: int, rng: np.random.Generator) -> list:
    """Uniformly sample ``count`` distinct flat positions of an array."""
    total = int(np.prod(shape))
    flat = rng.choice(total, size=min(count, total), replace=False)
    return [np.unravel_index(i, shape) for i in np.sort(flat)]
