"""Seeded random streams, Gaussian sampling and the finite-difference checker.

Arrays are plain ``numpy.ndarray`` of dtype float64 throughout the package.

Random stream
-------------
Every stream is a Philox4x64-10 counter-based generator keyed by
``(stream << 64) | seed`` with the counter starting at zero. A uniform double
in [0, 1) is ``(w >> 11) * 2**-53`` where ``w`` is the next 64-bit output word.
Sub-streams fold an integer path into the ``stream`` word with splitmix64, so
``RngState(7).substream(3)`` is always the same stream regardless of how much
of the parent has been consumed.

Gaussians use the Box-Muller transform on consecutive uniform pairs
``(u[2i], u[2i+1])``: ``r = sqrt(-2 log(1 - u[2i]))`` and the outputs are
``r cos(2 pi u[2i+1])`` then ``r sin(2 pi u[2i+1])``. An odd request discards
the final sine value.
"""

from __future__ import annotations

import copy
import math
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidArgumentError, NumericDomainError

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class RngState:
    """Deterministic random stream owned by exactly one caller at a time."""

    def __init__(self, seed: int, stream: int = 0):
        if seed < 0 or stream < 0:
            raise InvalidArgumentError("seed and stream must be non-negative")
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        self._gen = np.random.Generator(np.random.Philox(key=(self.stream << 64) | self.seed))

    def substream(self, *path: int) -> "RngState":
        s = self.stream
        for p in path:
            s = splitmix64(s ^ splitmix64(int(p) & _MASK64))
        return RngState(self.seed, s)

    def copy(self) -> "RngState":
        return copy.deepcopy(self)

    def uniform(self, n: int) -> np.ndarray:
        return self._gen.random(n)

    def integers(self, low: int, high: int, size=None):
        """Uniform integers in ``[low, high]`` inclusive."""
        return self._gen.integers(low, high, size=size, endpoint=True)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def normal(self, shape) -> np.ndarray:
        return gaussian_sample(self, shape)


def gaussian_sample(rng: RngState, shape) -> np.ndarray:
    """Draw i.i.d. standard normals with Box-Muller."""
    shape = (shape,) if isinstance(shape, (int, np.integer)) else tuple(shape)
    if len(shape) == 0 or any(int(d) < 1 for d in shape):
        raise InvalidArgumentError(f"gaussian_sample needs a non-empty shape, got {shape}")
    n = math.prod(shape)
    m = (n + 1) // 2
    u = rng.uniform(2 * m)
    u1 = 1.0 - u[0::2]  # (0, 1], keeps log finite
    u2 = u[1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    z = np.empty(2 * m)
    z[0::2] = r * np.cos(theta)
    z[1::2] = r * np.sin(theta)
    return z[:n].reshape(shape)


def finite_diff_grad(
    f: Callable[[np.ndarray], float],
    x: np.ndarray,
    h: float = 1e-5,
    coords: Sequence[int] | None = None,
) -> np.ndarray:
    """Central-difference gradient of a scalar function.

    Args:
        f: scalar function of an array shaped like ``x``.
        x: evaluation point (not modified).
        h: step size, must be positive.
        coords: flat indices to differentiate. Other entries of the result
            are left at zero. All coordinates when omitted.

    Returns:
        Array shaped like ``x``.
    """
    if not h > 0:
        raise InvalidArgumentError("step size must be positive")
    x = np.asarray(x, dtype=np.float64)
    work = x.copy().ravel()
    grad = np.zeros(work.size)
    idx = range(work.size) if coords is None else coords
    for i in idx:
        orig = work[i]
        work[i] = orig + h
        fp = float(f(work.reshape(x.shape)))
        work[i] = orig - h
        fm = float(f(work.reshape(x.shape)))
        work[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NumericDomainError(f"non-finite function value at coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(x.shape)


def relative_error(a, b, floor: float = 1e-6) -> np.ndarray:
    """Elementwise ``|a - b| / max(|a|, |b|, floor)``.

    The floor keeps coordinates whose true gradient is numerically zero from
    reporting spurious large relative errors.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def require_finite(x: np.ndarray, what: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericDomainError(f"{what} contains non-finite values")
    return x
