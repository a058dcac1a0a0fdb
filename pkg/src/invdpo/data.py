"""Toy 2-D Gaussian-mixture data: one mode per condition, evenly spaced on a circle."""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgumentError
from .numerics import RngState, gaussian_sample


def mixture_modes(n_modes: int = 8, radius: float = 4.0) -> np.ndarray:
    if n_modes < 1:
        raise InvalidArgumentError("need at least one mode")
    angle = 2.0 * np.pi * np.arange(n_modes) / n_modes
    return radius * np.stack([np.cos(angle), np.sin(angle)], axis=1)


def sample_mixture(rng: RngState, n: int, n_modes: int = 8, radius: float = 4.0, std: float = 0.3):
    """Return ``(x0, labels)``; label ``c`` marks a draw around mode ``c``.

    Labels are drawn first, then the offsets.
    """
    labels = rng.integers(0, n_modes - 1, size=n)
    x0 = mixture_modes(n_modes, radius)[labels] + std * gaussian_sample(rng, (n, 2))
    return x0, labels
