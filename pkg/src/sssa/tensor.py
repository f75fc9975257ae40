"""Dense tensor substrate: real/spike arrays, counter-based RNG, matmul and reductions.

Tensors are plain numpy arrays. ``RealTensor`` is float64, ``SpikeTensor`` is
uint8 restricted to {0, 1}. Constructors return read-only arrays so results
can be shared across threads without copying.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RealTensor = np.ndarray
SpikeTensor = np.ndarray


class ShapeError(ValueError):
    """Raised when tensor extents are incompatible with an operation."""


class DomainError(ValueError):
    """Raised when a scalar argument lies outside its valid domain."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def real(x) -> RealTensor:
    """Return ``x`` as a read-only float64 array, rejecting NaN/Inf."""
    a = np.array(x, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise DomainError("real tensor contains non-finite values")
    return _freeze(a)


def spikes(x) -> SpikeTensor:
    """Return ``x`` as a read-only uint8 spike array; every element must be 0 or 1."""
    a = np.asarray(x)
    if a.dtype == np.bool_:
        return _freeze(a.astype(np.uint8))
    if not np.all((a == 0) | (a == 1)):
        raise DomainError("spike tensor must contain only 0 and 1")
    return _freeze(a.astype(np.uint8))


def is_binary(a: np.ndarray) -> bool:
    a = np.asarray(a)
    return bool(np.all(a * (a - 1) == 0))


@dataclass(frozen=True)
class RngState:
    """Counter-based random stream.

    ``seed`` and ``counter`` together form the 128-bit Philox key, so each
    (seed, counter) pair names an independent, reproducible stream.
    """

    seed: int
    counter: int = 0

    def generator(self) -> np.random.Generator:
        key = (self.seed & 0xFFFFFFFFFFFFFFFF) | ((self.counter & 0xFFFFFFFFFFFFFFFF) << 64)
        return np.random.Generator(np.random.Philox(key=key))

    def stream(self, index: int) -> "RngState":
        """Independent sub-stream; used to partition Monte Carlo work."""
        return RngState(self.seed, (self.counter + 1 + index) * 0x9E3779B1 & 0xFFFFFFFFFFFFFFFF)

    def advance(self, steps: int = 1) -> "RngState":
        return RngState(self.seed, self.counter + steps)


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngState):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngState or numpy Generator, got {type(rng).__name__}")


def bernoulli_spikes(shape, p, rng) -> SpikeTensor:
    """Draw i.i.d. spikes that are 1 with probability ``p``.

    ``p`` may be a scalar or an array broadcastable to ``shape`` (per-element
    firing rates, as used by rate encoding).
    """
    p_arr = np.asarray(p, dtype=np.float64)
    if np.any(p_arr < 0.0) or np.any(p_arr > 1.0) or np.any(np.isnan(p_arr)):
        raise DomainError("firing rate must lie in [0, 1]")
    u = _as_generator(rng).random(tuple(shape))
    return _freeze((u < p_arr).astype(np.uint8))


def matmul(a, b) -> RealTensor:
    """Matrix product of ``[m, k]`` and ``[k, n]``.

    Accumulates over the inner index strictly left to right so results are
    bit-stable regardless of the BLAS in use.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner extents differ: {a.shape} x {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]))
    for k in range(a.shape[1]):
        out += a[:, k : k + 1] * b[k : k + 1, :]
    return _freeze(out)


def sum_axis(t, axis: int) -> np.ndarray:
    """Sum along ``axis``; spike inputs produce integer-valued float64 sums."""
    a = np.asarray(t)
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"axis {axis} out of range for rank {a.ndim}")
    return _freeze(np.sum(a, axis=axis, dtype=np.float64))
