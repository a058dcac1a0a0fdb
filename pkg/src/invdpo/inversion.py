"""Deterministic DDIM inversion x_0 -> x_T and the diagnostics built on it."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .denoiser import eps_forward
from .diffusion import INVERTED, Trajectory, sample
from .errors import InvalidArgumentError
from .numerics import require_finite
from .schedule import NoiseSchedule


def invert_step(model, s: NoiseSchedule, x_prev, t: int, c, corrector=None) -> np.ndarray:
    """Map x_{t-1} to x_t, reusing the noise predicted at (x_{t-1}, t-1).

    ``corrector``, if given, is called as ``corrector(x_t, t)`` and its
    return value replaces the first-order estimate.
    """
    t = s.check_step(t)
    a, a_prev = s.alpha[t], s.alpha[t - 1]
    x_prev = np.asarray(x_prev, dtype=np.float64)
    eps = eps_forward(model, s, x_prev, t - 1, c)
    ratio = a / a_prev
    coef = np.sqrt(1.0 - a) - np.sqrt(max(ratio - a, 0.0))
    x_t = np.sqrt(ratio) * x_prev + coef * eps
    if corrector is not None:
        x_t = corrector(x_t, t)
    return x_t


def invert(model, s: NoiseSchedule, x0, c, upto: int | None = None) -> Trajectory:
    """Invert ``x0`` through every step. With ``upto`` only x_0..x_upto are computed
    and the trajectory's ``T`` is ``upto``."""
    x0 = require_finite(np.asarray(x0, dtype=np.float64), "x0")
    last = s.T if upto is None else s.check_step(upto)
    states = np.empty((last + 1,) + x0.shape)
    states[0] = x0
    x = x0
    for t in range(1, last + 1):
        x = invert_step(model, s, x, t, c)
        states[t] = x
    return Trajectory(states=states, direction=INVERTED, condition=c, T=last)


def roundtrip_error(model, s: NoiseSchedule, x0, c):
    """||sample(invert(x0).x_T).x_0 - x0|| / (||x0|| + 1e-12), per row for a batch."""
    x0 = np.asarray(x0, dtype=np.float64)
    back = sample(model, s, invert(model, s, x0, c).xT, c).x0
    err = np.linalg.norm(back - x0, axis=-1) / (np.linalg.norm(x0, axis=-1) + 1e-12)
    return float(err) if x0.ndim == 1 else err


def adjacent_eps_gap(model, s: NoiseSchedule, trajectory: Trajectory, c):
    """Mean over t of ||eps(x_t, t) - eps(x_{t-1}, t-1)||, per row for a batch."""
    states = trajectory.states
    if len(states) != s.T + 1:
        raise InvalidArgumentError(f"trajectory has {len(states)} states, schedule needs {s.T + 1}")
    eps = np.stack([eps_forward(model, s, states[t], t, c) for t in range(s.T + 1)])
    gaps = np.linalg.norm(np.diff(eps, axis=0), axis=-1)
    out = gaps.mean(axis=0)
    return float(out) if np.ndim(out) == 0 else out


def write_trajectory_csv(trajectory: Trajectory, path, label: str = "") -> None:
    """One row per (step, item): ``direction,label,step,item,x0,x1,...``."""
    states = trajectory.states
    if states.ndim == 2:
        states = states[:, None, :]
    d = states.shape[-1]
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["direction", "label", "step", "item"] + [f"x{k}" for k in range(d)])
        for t in range(states.shape[0]):
            for i in range(states.shape[1]):
                w.writerow([trajectory.direction, label, t, i] + [repr(float(v)) for v in states[t, i]])
