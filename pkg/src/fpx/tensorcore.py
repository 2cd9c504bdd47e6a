"""Dense matrix helpers and the SplitMix64 generator used everywhere else.

Matrices are plain 2-D numpy arrays. Weights are stored as float32; every
product is accumulated in float64 so that quantization rounding is the only
error source measured downstream.
"""

from __future__ import annotations

import numpy as np

GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_MASK64 = (1 << 64) - 1
_INV_2_53 = 1.0 / (1 << 53)


class ShapeError(ValueError):
    """Raised when matrix operands have incompatible shapes."""


def as_matrix(x, dtype=np.float64) -> np.ndarray:
    m = np.asarray(x, dtype=dtype)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite entries")
    return m


def matmul(a, b) -> np.ndarray:
    """Row-major product ``a @ b`` accumulated in float64."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def frobenius_norm(m) -> float:
    m = np.asarray(m, dtype=np.float64)
    return float(np.sqrt(np.sum(m * m)))


def splitmix64_mix(z: int) -> int:
    """The SplitMix64 output finalizer applied to a 64-bit word."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, *salt: int) -> int:
    """Mix integers into a child seed; stable across platforms and runs."""
    z = seed & _MASK64
    for s in salt:
        z = splitmix64_mix((z ^ (s & _MASK64)) + GOLDEN_GAMMA)
    return z


class Rng:
    """SplitMix64. Not thread-safe: one instance per simulation loop."""

    __slots__ = ("state",)

    def __init__(self, seed: int = 0):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & _MASK64
        return splitmix64_mix(self.state)

    def next_uniform(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * _INV_2_53

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.next_uniform()

    def bernoulli(self, p: float) -> bool:
        return self.next_uniform() < p

    def below(self, n: int) -> int:
        if n <= 0:
            raise ValueError("n must be positive")
        return int(self.next_uniform() * n)

    def uniform_array(self, n: int) -> np.ndarray:
        """``n`` consecutive ``next_uniform`` draws, vectorised.

        The SplitMix64 state after ``k`` steps is ``seed + k * gamma`` so the
        whole block can be computed without a Python loop.
        """
        if n < 0:
            raise ValueError("n must be non-negative")
        with np.errstate(over="ignore"):
            steps = np.arange(1, n + 1, dtype=np.uint64)
            z = np.uint64(self.state) + steps * np.uint64(GOLDEN_GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * GOLDEN_GAMMA) & _MASK64
        return (z >> np.uint64(11)).astype(np.float64) * _INV_2_53
