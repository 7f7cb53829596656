from __future__ import annotations

import logging
from collections.abc import Sequence
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import lapack

from deepsurrogate.errors import DecompositionError, NumericError, ShapeError, UsageError

logger = logging.getLogger(__name__)

Tensor = NDArray[np.float64]

DEFAULT_JITTER = 1e-8


class Rng:
    """Seeded random stream backed by ``numpy.random.Generator`` (PCG64).

    A stream is single-owner. Work that runs concurrently takes its own child
    stream from :meth:`spawn`, whose seed material is ``(seed, index)``.

    Attributes:
        seed: The seed this stream was created from.
    """

    def __init__(self, seed: int | Sequence[int] = 0) -> None:
        self._entropy = tuple(seed) if isinstance(seed, Sequence) else (int(seed),)
        if any(v < 0 for v in self._entropy):
            raise UsageError(f"seed must be non-negative, got {seed}")
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self._entropy)))

    @property
    def seed(self) -> int:
        return self._entropy[0]

    @property
    def entropy(self) -> tuple[int, ...]:
        return self._entropy

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def spawn(self, index: int) -> Rng:
        """Derive an independent child stream for sub-task ``index``."""
        return Rng((*self._entropy, int(index)))

    def normal(self, size: int | tuple[int, ...] | None = None) -> Any:
        return self._gen.standard_normal(size)

    def uniform(
        self, low: float = 0.0, high: float = 1.0, size: int | tuple[int, ...] | None = None
    ) -> Any:
        return self._gen.uniform(low, high, size)

    def permutation(self, n: int) -> NDArray[np.int64]:
        return self._gen.permutation(n)

    def choice(self, a: int, size: int, replace: bool = True) -> NDArray[np.int64]:
        return self._gen.choice(a, size=size, replace=replace)

    def bernoulli(self, p_keep: float, shape: int | tuple[int, ...]) -> Tensor:
        """Draw a 0/1 float array where each entry is 1 with probability ``p_keep``."""
        if p_keep >= 1.0:
            return np.ones(shape)
        return (self._gen.random(shape) < p_keep).astype(np.float64)

    def __repr__(self) -> str:
        return f"Rng(entropy={self._entropy})"


def as_tensor(values: ArrayLike, shape: tuple[int, ...] | None = None) -> Tensor:
    """Coerce ``values`` to a contiguous float64 array and check it is finite.

    Args:
        values: Anything numpy can turn into an array.
        shape: Optional expected shape.

    Raises:
        ShapeError: If ``shape`` is given and does not match.
        NumericError: If any entry is NaN or infinite.
    """
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if shape is not None and arr.shape != tuple(shape):
        raise ShapeError(f"expected shape {tuple(shape)}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError("tensor contains non-finite values")
    return arr


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Standard matrix product of an m×k and a k×n tensor."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def add_jitter(a: Tensor, jitter: float = DEFAULT_JITTER) -> Tensor:
    """Return ``a`` with ``jitter`` added to its diagonal."""
    out = np.array(a, dtype=np.float64, copy=True)
    out[np.diag_indices_from(out)] += jitter
    return out


def cholesky(a: Tensor) -> Tensor:
    """Lower-triangular Cholesky factor ``L`` with ``L @ L.T == a``.

    Raises:
        ShapeError: If ``a`` is not square.
        UsageError: If ``a`` is not symmetric.
        DecompositionError: If a squared diagonal entry is at most
            ``eps * n * max`` of them; ``pivot`` is the
            0-based index of the failing diagonal entry.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"cholesky expects a square matrix, got {a.shape}")
    scale = max(float(np.max(np.abs(a))), 1.0) if a.size else 1.0
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-10 * scale):
        raise UsageError("cholesky expects a symmetric matrix")
    if a.shape[0] == 0:
        return a.copy()

    factor, info = lapack.dpotrf(a, lower=1, clean=1)
    if info > 0:
        pivot = int(info) - 1
        logger.debug("Cholesky failed at pivot %d of %d", pivot, a.shape[0])
        raise DecompositionError(pivot)
    if info < 0:  # pragma: no cover - LAPACK argument error
        raise NumericError(f"dpotrf rejected argument {-info}")
    pivots = np.diag(factor) ** 2
    tol = np.finfo(np.float64).eps * a.shape[0] * float(pivots.max())
    small = np.flatnonzero(pivots <= tol)
    if small.size:
        pivot = int(small[0])
        raise DecompositionError(
            pivot, f"matrix is numerically singular (pivot {pivot} is {pivots[pivot]:.3g}, tolerance {tol:.3g})"
        )
    return np.ascontiguousarray(factor)


def mvn_sample(
    mean: Tensor,
    chol_lower: Tensor,
    rng: Rng,
    size: int | None = None,
) -> Tensor:
    """Draw ``mean + L @ eps`` with ``eps`` i.i.d. standard normal.

    Args:
        mean: Mean vector of length n.
        chol_lower: n×n lower Cholesky factor of the covariance.
        rng: Random stream.
        size: Optional number of draws; the result is then size×n.
    """
    mean = np.asarray(mean, dtype=np.float64)
    chol_lower = np.asarray(chol_lower, dtype=np.float64)
    n = mean.shape[0] if mean.ndim == 1 else -1
    if mean.ndim != 1 or chol_lower.shape != (n, n):
        raise ShapeError(
            f"mean {mean.shape} and factor {chol_lower.shape} are inconsistent"
        )
    if size is None:
        return mean + chol_lower @ rng.normal(n)
    eps = rng.normal((size, n))
    return mean + eps @ chol_lower.T
