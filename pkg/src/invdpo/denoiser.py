"""Noise predictor eps(x_t, t, c): a small MLP with a hand-written backward pass."""

from __future__ import annotations

import copy
import hashlib

import numpy as np

from .errors import InvalidArgumentError, StateError
from .numerics import RngState, gaussian_sample
from .schedule import NoiseSchedule

PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")


def time_embedding(tau: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal features of continuous time tau in [0, 1].

    Frequencies are geometric from 1 to 100 rad per unit tau; the first half
    of the features are sines, the second half cosines.
    """
    half = dim // 2
    freqs = 100.0 ** (np.arange(half) / max(half - 1, 1))
    arg = np.asarray(tau, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


def _silu(z):
    s = 1.0 / (1.0 + np.exp(-z))
    return z * s, s


def _as_batch(x, data_dim):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != data_dim:
        raise InvalidArgumentError(f"expected data of dim {data_dim}, got shape {x.shape}")
    return x2, single


def _broadcast(v, n, dtype):
    v = np.asarray(v, dtype=dtype)
    if v.ndim == 0:
        return np.full(n, v, dtype=dtype)
    if v.shape != (n,):
        raise InvalidArgumentError(f"expected {n} entries, got shape {v.shape}")
    return v


class Denoiser:
    """Three fully-connected layers with SiLU between them and a linear head.

    Input features are ``[x, time_embedding(t/T), one_hot(c)]``. Parameters
    live in ``self.params`` in the fixed order W1, b1, W2, b2, W3, b3, with
    ``W`` stored as (fan_in, fan_out).
    """

    def __init__(self, data_dim=2, n_conditions=8, hidden=128, time_dim=16, params=None):
        if time_dim % 2:
            raise InvalidArgumentError("time_dim must be even")
        self.data_dim = int(data_dim)
        self.n_conditions = int(n_conditions)
        self.hidden = int(hidden)
        self.time_dim = int(time_dim)
        d_in = self.data_dim + self.time_dim + self.n_conditions
        self.layer_dims = (d_in, self.hidden, self.hidden, self.data_dim)
        shapes = self.param_shapes()
        if params is None:
            params = [np.zeros(sh) for sh in shapes]
        params = [np.array(p, dtype=np.float64) for p in params]
        if [p.shape for p in params] != shapes:
            raise InvalidArgumentError("parameter shapes do not match layer dims")
        self.params = params
        self._cache = None

    @classmethod
    def init_random(cls, rng: RngState, **kw) -> "Denoiser":
        model = cls(**kw)
        for i in range(0, len(model.params), 2):
            fan_in = model.params[i].shape[0]
            model.params[i] = gaussian_sample(rng, model.params[i].shape) / np.sqrt(fan_in)
        return model

    def param_shapes(self):
        d = self.layer_dims
        return [(d[0], d[1]), (d[1],), (d[1], d[2]), (d[2],), (d[2], d[3]), (d[3],)]

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, v: np.ndarray) -> None:
        v = np.asarray(v, dtype=np.float64)
        if v.size != self.n_params:
            raise InvalidArgumentError("flat parameter vector has wrong length")
        out, off = [], 0
        for sh in self.param_shapes():
            n = int(np.prod(sh))
            out.append(v[off:off + n].reshape(sh).copy())
            off += n
        self.params = out

    def clone(self) -> "Denoiser":
        other = copy.copy(self)
        other.params = [p.copy() for p in self.params]
        other._cache = None
        return other

    def param_hash(self) -> str:
        h = hashlib.sha256()
        for p in self.params:
            h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
        return h.hexdigest()

    def features(self, x, tau, c):
        x2, single = _as_batch(x, self.data_dim)
        n = x2.shape[0]
        tau = _broadcast(tau, n, np.float64)
        c = _broadcast(c, n, np.int64)
        if np.any(c < 0) or np.any(c >= self.n_conditions):
            raise InvalidArgumentError(f"condition label outside [0, {self.n_conditions})")
        onehot = np.zeros((n, self.n_conditions))
        onehot[np.arange(n), c] = 1.0
        return np.concatenate([x2, time_embedding(tau, self.time_dim), onehot], axis=1), single

    def forward(self, x, tau, c, keep: bool = False) -> np.ndarray:
        """Predict noise for a single point ``(d,)`` or a batch ``(n, d)``.

        With ``keep=True`` the activations are recorded for :meth:`backward`.
        """
        inp, single = self.features(x, tau, c)
        W1, b1, W2, b2, W3, b3 = self.params
        z1 = inp @ W1 + b1
        a1, s1 = _silu(z1)
        z2 = a1 @ W2 + b2
        a2, s2 = _silu(z2)
        out = a2 @ W3 + b3
        if keep:
            self._cache = (inp, z1, a1, s1, z2, a2, s2)
        return out[0] if single else out

    __call__ = forward

    def backward(self, grad_out) -> list[np.ndarray]:
        """Parameter gradients of ``sum(grad_out * forward_output)``.

        Consumes the activations recorded by the last ``forward(..., keep=True)``.
        """
        if self._cache is None:
            raise StateError("backward called without a recorded forward pass")
        inp, z1, a1, s1, z2, a2, s2 = self._cache
        self._cache = None
        g = np.asarray(grad_out, dtype=np.float64).reshape(inp.shape[0], self.data_dim)
        W1, b1, W2, b2, W3, b3 = self.params
        dW3 = a2.T @ g
        db3 = g.sum(axis=0)
        da2 = g @ W3.T
        dz2 = da2 * (s2 * (1.0 + z2 * (1.0 - s2)))
        dW2 = a1.T @ dz2
        db2 = dz2.sum(axis=0)
        da1 = dz2 @ W2.T
        dz1 = da1 * (s1 * (1.0 + z1 * (1.0 - s1)))
        dW1 = inp.T @ dz1
        db1 = dz1.sum(axis=0)
        return [dW1, db1, dW2, db2, dW3, db3]


def eps_forward(model: Denoiser, s: NoiseSchedule, x, t, c, keep: bool = False) -> np.ndarray:
    """Noise prediction at integer timestep(s) ``t`` in ``[0, T]``."""
    t = np.asarray(t)
    if np.any(t < 0) or np.any(t > s.T):
        raise InvalidArgumentError(f"timestep outside [0, {s.T}]")
    return model.forward(x, s.tau(t), c, keep=keep)


def x0_predict(model: Denoiser, s: NoiseSchedule, x_t, t: int, c, eps=None) -> np.ndarray:
    """Denoised estimate ``(x_t - sqrt(1 - alpha_t) eps) / sqrt(alpha_t)``.

    ``eps`` may be passed when the noise prediction is already known.
    """
    t = s.check_step(t)
    a = s.alpha[t]
    if eps is None:
        eps = eps_forward(model, s, x_t, t, c)
    return (np.asarray(x_t, dtype=np.float64) - np.sqrt(1.0 - a) * eps) / np.sqrt(a)
