"""Diffusion-DPO and Inversion-DPO preference losses with analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .denoiser import eps_forward
from .diffusion import forward_noise
from .errors import InvalidArgumentError, NumericDomainError
from .inversion import invert
from .numerics import RngState, gaussian_sample
from .preference import PairBatch, PreferencePair
from .schedule import NoiseSchedule

DIFFUSION_DPO = "diffusion-dpo"
INVERSION_DPO = "inversion-dpo"
FULL_TRAJECTORY = "full-trajectory"
SINGLE_T = "single-uniform-t"


@dataclass
class DpoConfig:
    beta: float = 2000.0
    variant: str = INVERSION_DPO
    inner_sign: int = 1
    omega_mode: str = "constant-one"
    timestep_mode: str | None = None

    def __post_init__(self):
        if not self.beta > 0:
            raise InvalidArgumentError("beta must be positive")
        if self.variant not in (DIFFUSION_DPO, INVERSION_DPO):
            raise InvalidArgumentError(f"unknown loss variant {self.variant!r}")
        if self.inner_sign not in (1, -1):
            raise InvalidArgumentError("inner_sign must be +1 or -1")
        if self.omega_mode != "constant-one":
            raise InvalidArgumentError(f"unsupported omega mode {self.omega_mode!r}")
        if self.timestep_mode is None:
            self.timestep_mode = FULL_TRAJECTORY if self.variant == INVERSION_DPO else SINGLE_T
        if self.timestep_mode not in (FULL_TRAJECTORY, SINGLE_T):
            raise InvalidArgumentError(f"unknown timestep mode {self.timestep_mode!r}")


@dataclass
class LossResult:
    loss: float
    margins: np.ndarray
    grads: list | None
    n_terms: int

    @property
    def accuracy(self) -> float:
        return float(np.mean(self.margins > 0))


class TermCounter:
    """Counts squared-norm evaluations; attach one to a loss call to audit its structure."""

    def __init__(self):
        self.count = 0


def _sq_norms(diff, counter):
    """Row-wise squared norms over the last axis; one counted term per row."""
    out = np.sum(diff * diff, axis=-1)
    counter.count += out.size
    return out


def _as_batch(pairs) -> PairBatch:
    if isinstance(pairs, PairBatch):
        return pairs
    if isinstance(pairs, PreferencePair):
        pairs = [pairs]
    return PairBatch.from_pairs(list(pairs))


def neg_log_sigmoid(m):
    return np.logaddexp(0.0, -np.asarray(m, dtype=np.float64))


def _draw_timesteps(s, n, mode, rng):
    """(n, k) timesteps: all of 1..T, or one uniform draw per pair."""
    if mode == FULL_TRAJECTORY:
        return np.tile(np.arange(1, s.T + 1), (n, 1)), 1.0
    if rng is None:
        raise InvalidArgumentError("single-timestep mode needs an rng")
    return rng.integers(1, s.T, size=n)[:, None], float(s.T)


def diffusion_dpo_loss(
    model, ref_model, s: NoiseSchedule, pairs, cfg: DpoConfig, rng: RngState,
    need_grad: bool = True, counter: TermCounter | None = None,
) -> LossResult:
    """-log sigma(-beta T (D_w - D_l)) with D = ||eps - eps_theta||^2 - ||eps - eps_ref||^2.

    Noisy states come from the forward process with fresh noise. Draw order
    from ``rng``: timesteps, winner noise, loser noise. In full-trajectory
    mode every t in 1..T gets its own noise and the factor T is dropped.
    """
    batch = _as_batch(pairs)
    counter = counter if counter is not None else TermCounter()
    start = counter.count
    n, d = batch.winner.shape
    ts, scale = _draw_timesteps(s, n, cfg.timestep_mode, rng)
    k = ts.shape[1]
    eps_w = gaussian_sample(rng, (n, k, d))
    eps_l = gaussian_sample(rng, (n, k, d))
    xw = forward_noise(s, np.repeat(batch.winner, k, axis=0), ts.ravel(), eps_w.reshape(-1, d))
    xl = forward_noise(s, np.repeat(batch.loser, k, axis=0), ts.ravel(), eps_l.reshape(-1, d))
    x = np.concatenate([xw, xl])
    t_all = np.concatenate([ts.ravel(), ts.ravel()])
    c_all = np.concatenate([np.repeat(batch.condition, k)] * 2)
    eps = np.concatenate([eps_w.reshape(-1, d), eps_l.reshape(-1, d)])
    pred = eps_forward(model, s, x, t_all, c_all, keep=need_grad)
    ref = eps_forward(ref_model, s, x, t_all, c_all)
    err_model = _sq_norms(eps - pred, counter).reshape(2, n, k)
    err_ref = _sq_norms(eps - ref, counter).reshape(2, n, k)
    delta = (err_model - err_ref).sum(axis=2)
    coef = cfg.beta * scale
    margins = -coef * (delta[0] - delta[1])
    # dm/dpred: winner rows -coef * 2 (pred - eps), loser rows +coef * 2 (pred - eps)
    sign = np.concatenate([-np.ones(n * k), np.ones(n * k)])[:, None]
    dm = sign * coef * 2.0 * (pred - eps)
    dm = np.concatenate([dm[: n * k].reshape(n, k, d), dm[n * k:].reshape(n, k, d)], axis=1)
    return _finish_rows(model, margins, dm, need_grad, counter.count - start, n, k)


def _finish_rows(model, margins, dm, need_grad, n_terms, n, k):
    """``dm`` is (n, 2k, d): winner rows then loser rows for each pair."""
    loss = float(np.mean(neg_log_sigmoid(margins)))
    if not np.isfinite(loss):
        raise NumericDomainError("preference loss is not finite")
    grads = None
    if need_grad:
        w = -0.5 * (1.0 - np.tanh(0.5 * margins)) / n  # d(-log sigma(m))/dm, averaged
        g = w[:, None, None] * dm
        d = dm.shape[-1]
        g_rows = np.concatenate([g[:, :k].reshape(-1, d), g[:, k:].reshape(-1, d)])
        grads = model.backward(g_rows)
    return LossResult(loss=loss, margins=margins, grads=grads, n_terms=n_terms)


def inversion_trajectories(model, s: NoiseSchedule, pairs, cfg: DpoConfig, rng: RngState | None = None):
    """Invert both members of every pair with ``model``.

    Returns:
        ``(ts, states_w, states_l, scale)`` with ``ts`` of shape (n, k) and
        states (n, k, d) at those timesteps.
    """
    batch = _as_batch(pairs)
    n = len(batch)
    ts, scale = _draw_timesteps(s, n, cfg.timestep_mode, rng)
    upto = int(ts.max())
    both = np.concatenate([batch.winner, batch.loser])
    cond = np.concatenate([batch.condition, batch.condition])
    traj = invert(model, s, both, cond, upto=upto).states  # (upto+1, 2n, d)
    rows = np.arange(n)[:, None]
    states_w = traj[ts, rows]
    states_l = traj[ts, rows + n]
    if not (np.all(np.isfinite(states_w)) and np.all(np.isfinite(states_l))):
        raise NumericDomainError("inverted trajectory is not finite")
    return ts, states_w, states_l, scale


def inversion_dpo_objective(
    model, ref_model, s: NoiseSchedule, condition, ts, states_w, states_l, scale, cfg: DpoConfig,
    need_grad: bool = True, counter: TermCounter | None = None,
) -> LossResult:
    """Loss for fixed trajectory states; gradients reach only the eps_theta evaluations.

    ``margin = beta * inner_sign * scale * sum_t (||eps_theta - eps_ref||^2 at x_t^w
    - ||eps_theta - eps_ref||^2 at x_t^l)``.
    """
    counter = counter if counter is not None else TermCounter()
    start = counter.count
    n, k, d = states_w.shape
    condition = np.asarray(condition)
    x = np.concatenate([states_w.reshape(-1, d), states_l.reshape(-1, d)])
    t_all = np.concatenate([ts.ravel(), ts.ravel()])
    c_all = np.concatenate([np.repeat(condition, k)] * 2)
    pred = eps_forward(model, s, x, t_all, c_all, keep=need_grad)
    ref = eps_forward(ref_model, s, x, t_all, c_all)
    diff = pred - ref
    gaps = _sq_norms(diff, counter).reshape(2, n, k).sum(axis=2)
    coef = cfg.beta * cfg.inner_sign * scale
    margins = coef * (gaps[0] - gaps[1])
    sign = np.concatenate([np.ones(n * k), -np.ones(n * k)])[:, None]
    dm = sign * coef * 2.0 * diff
    dm = np.concatenate([dm[: n * k].reshape(n, k, d), dm[n * k:].reshape(n, k, d)], axis=1)
    return _finish_rows(model, margins, dm, need_grad, counter.count - start, n, k)


def inversion_dpo_loss(
    model, ref_model, s: NoiseSchedule, pairs, cfg: DpoConfig, rng: RngState | None = None,
    need_grad: bool = True, counter: TermCounter | None = None,
) -> LossResult:
    """Invert the pair with the current model, then score its trajectories.

    ``rng`` is only consumed in single-timestep mode (one t per pair, sum
    rescaled by T).
    """
    batch = _as_batch(pairs)
    ts, sw, sl, scale = inversion_trajectories(model, s, batch, cfg, rng)
    return inversion_dpo_objective(
        model, ref_model, s, batch.condition, ts, sw, sl, scale, cfg, need_grad=need_grad, counter=counter
    )


def dpo_loss(model, ref_model, s, pairs, cfg: DpoConfig, rng=None, need_grad=True, counter=None) -> LossResult:
    if cfg.variant == DIFFUSION_DPO:
        return diffusion_dpo_loss(model, ref_model, s, pairs, cfg, rng, need_grad, counter)
    return inversion_dpo_loss(model, ref_model, s, pairs, cfg, rng, need_grad, counter)


def implicit_reward_margin(model, ref_model, s, pairs, cfg: DpoConfig, rng=None):
    """Signed sigmoid argument of the configured loss; positive favours the winner.

    Scalar for a single pair, array for a batch.
    """
    single = isinstance(pairs, PreferencePair)
    m = dpo_loss(model, ref_model, s, pairs, cfg, rng, need_grad=False).margins
    return float(m[0]) if single else m
