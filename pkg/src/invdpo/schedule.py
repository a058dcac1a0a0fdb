"""Signal-retention schedule alpha_0..alpha_T."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError

DEFAULT_T = 80
DEFAULT_ALPHA_T = 0.01


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative signal retention per step.

    ``alpha[0] == 1`` and ``alpha`` strictly decreases. ``sigma[t-1]`` is the
    sampler noise for step ``t``; the deterministic sampler keeps it at zero.
    """

    T: int
    alpha: np.ndarray
    sigma: np.ndarray = field(default=None)

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=np.float64)
        if self.T < 1 or alpha.shape != (self.T + 1,):
            raise InvalidArgumentError(f"alpha must have T+1={self.T + 1} entries")
        if alpha[0] != 1.0:
            raise InvalidArgumentError("alpha_0 must equal 1")
        if not np.all(np.diff(alpha) < 0) or not alpha[-1] > 0:
            raise InvalidArgumentError("alpha must be strictly decreasing and positive")
        sigma = np.zeros(self.T) if self.sigma is None else np.asarray(self.sigma, dtype=np.float64)
        if sigma.shape != (self.T,) or np.any(sigma < 0):
            raise InvalidArgumentError("sigma must hold T non-negative entries")
        alpha.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "sigma", sigma)

    def check_step(self, t: int, lowest: int = 1) -> int:
        t = int(t)
        if not lowest <= t <= self.T:
            raise InvalidArgumentError(f"timestep {t} outside [{lowest}, {self.T}]")
        return t

    def tau(self, t):
        """Continuous time ``t / T`` fed to the denoiser."""
        return np.asarray(t, dtype=np.float64) / self.T

    def __eq__(self, other):
        if not isinstance(other, NoiseSchedule):
            return NotImplemented
        return (
            self.T == other.T
            and np.array_equal(self.alpha, other.alpha)
            and np.array_equal(self.sigma, other.sigma)
        )

    __hash__ = None


def make_schedule(T: int = DEFAULT_T, alpha_T_target: float = DEFAULT_ALPHA_T) -> NoiseSchedule:
    """Log-linear schedule from 1 down to ``alpha_T_target`` over ``T`` steps."""
    if int(T) != T or T < 1:
        raise InvalidArgumentError(f"T must be a positive integer, got {T}")
    if not 0.0 < alpha_T_target < 1.0:
        raise InvalidArgumentError(f"alpha_T target must lie in (0, 1), got {alpha_T_target}")
    T = int(T)
    log_a = math.log(alpha_T_target)
    alpha = np.exp(np.arange(T + 1) * (log_a / T))
    alpha[0] = 1.0
    alpha[-1] = alpha_T_target
    return NoiseSchedule(T=T, alpha=alpha)


def snr_log(s: NoiseSchedule, t: int) -> float:
    """log(alpha_t / (1 - alpha_t)); undefined at t=0."""
    t = s.check_step(t)
    a = float(s.alpha[t])
    return math.log(a / (1.0 - a))
