"""Forward noising, the epsilon-matching pretraining loss and the deterministic DDIM sampler."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .denoiser import eps_forward, x0_predict
from .errors import InvalidArgumentError
from .numerics import RngState, gaussian_sample, require_finite
from .schedule import NoiseSchedule

SAMPLED = "sampled"
INVERTED = "inverted"


@dataclass
class Trajectory:
    """States x_0..x_T, indexed by timestep along the first axis.

    ``states[t]`` has the shape of one input, either ``(d,)`` or ``(n, d)``.
    """

    states: np.ndarray
    direction: str
    condition: object
    T: int

    def __post_init__(self):
        if self.direction not in (SAMPLED, INVERTED):
            raise InvalidArgumentError(f"unknown direction {self.direction!r}")
        if len(self.states) != self.T + 1:
            raise InvalidArgumentError("trajectory must hold T+1 states")
        require_finite(self.states, "trajectory")

    @property
    def x0(self) -> np.ndarray:
        return self.states[0]

    @property
    def xT(self) -> np.ndarray:
        return self.states[-1]

    def __len__(self):
        return len(self.states)


def forward_noise(s: NoiseSchedule, x0, t, eps) -> np.ndarray:
    """sqrt(alpha_t) x0 + sqrt(1 - alpha_t) eps; ``t`` may be per-row."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise InvalidArgumentError(f"x0 shape {x0.shape} != eps shape {eps.shape}")
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > s.T):
        raise InvalidArgumentError(f"timestep outside [1, {s.T}]")
    a = s.alpha[t]
    if a.ndim == 1 and x0.ndim == 2:
        a = a[:, None]
    return np.sqrt(a) * x0 + np.sqrt(1.0 - a) * eps


def base_loss(model, s: NoiseSchedule, x0, c, rng: RngState, need_grad: bool = True):
    """Mean over the batch of ||eps - eps_theta(x_t, t, c)||^2.

    Draws ``t`` uniform on 1..T per row, then the noise, from ``rng``.

    Returns:
        ``(loss, grads)`` with grads aligned to ``model.params`` (None when
        ``need_grad`` is false).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.size == 0:
        raise InvalidArgumentError("empty batch")
    x0 = np.atleast_2d(x0)
    n = x0.shape[0]
    t = rng.integers(1, s.T, size=n)
    eps = gaussian_sample(rng, x0.shape)
    x_t = forward_noise(s, x0, t, eps)
    pred = eps_forward(model, s, x_t, t, c, keep=need_grad)
    r = pred - eps
    loss = float(np.sum(r * r) / n)
    grads = model.backward(2.0 * r / n) if need_grad else None
    return loss, grads


def ddim_step(model, s: NoiseSchedule, x_t, t: int, c) -> np.ndarray:
    """One deterministic (sigma = 0) generative step x_t -> x_{t-1}."""
    t = s.check_step(t)
    a_prev = s.alpha[t - 1]
    x_t = np.asarray(x_t, dtype=np.float64)
    eps = eps_forward(model, s, x_t, t, c)
    x0_hat = x0_predict(model, s, x_t, t, c, eps=eps)
    return np.sqrt(a_prev) * x0_hat + np.sqrt(1.0 - a_prev) * eps


def sample(model, s: NoiseSchedule, x_T, c) -> Trajectory:
    x_T = require_finite(np.asarray(x_T, dtype=np.float64), "x_T")
    states = np.empty((s.T + 1,) + x_T.shape)
    states[s.T] = x_T
    x = x_T
    for t in range(s.T, 0, -1):
        x = ddim_step(model, s, x, t, c)
        states[t - 1] = x
    return Trajectory(states=states, direction=SAMPLED, condition=c, T=s.T)


__all__ = [
    "Trajectory",
    "forward_noise",
    "base_loss",
    "ddim_step",
    "sample",
    "x0_predict",
    "SAMPLED",
    "INVERTED",
]
