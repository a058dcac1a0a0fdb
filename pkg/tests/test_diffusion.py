import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from invdpo.data import mixture_modes, sample_mixture
from invdpo.diffusion import Trajectory, base_loss, ddim_step, forward_noise, sample
from invdpo.errors import InvalidArgumentError, NumericDomainError
from invdpo.numerics import RngState, finite_diff_grad, gaussian_sample, relative_error
from invdpo.schedule import NoiseSchedule, make_schedule

from conftest import FnModel, small_denoiser, zero_model


def test_forward_noise_examples():
    s = NoiseSchedule(T=1, alpha=np.array([1.0, 0.25]))
    assert np.array_equal(forward_noise(s, np.array([2.0]), 1, np.array([0.0])), [1.0])
    s = NoiseSchedule(T=1, alpha=np.array([1.0, 0.19]))
    assert forward_noise(s, np.array([0.0]), 1, np.array([1.0]))[0] == pytest.approx(0.9, abs=1e-15)


def test_forward_noise_errors():
    s = make_schedule(4)
    with pytest.raises(InvalidArgumentError):
        forward_noise(s, np.zeros(2), 1, np.zeros(3))
    with pytest.raises(InvalidArgumentError):
        forward_noise(s, np.zeros(2), 0, np.zeros(2))


def test_forward_noise_per_row_t():
    s = make_schedule(4, 0.1)
    x0, eps = np.ones((2, 2)), np.zeros((2, 2))
    out = forward_noise(s, x0, np.array([1, 4]), eps)
    assert np.allclose(out[:, 0], np.sqrt(s.alpha[[1, 4]]))


class _EpsRecorder:
    """Stub that returns the exact noise used to build x_t."""

    def __init__(self, s, x0):
        self.s, self.x0, self.data_dim = s, x0, x0.shape[1]

    def forward(self, x, tau, c, keep=False):
        t = np.rint(np.asarray(tau) * self.s.T).astype(int)
        a = self.s.alpha[t][:, None]
        return (x - np.sqrt(a) * self.x0) / np.sqrt(1 - a)

    def backward(self, g):
        return []


def test_base_loss_exact_noise_is_zero():
    s = make_schedule(20, 0.05)
    x0 = np.random.default_rng(0).normal(size=(32, 2))
    loss, _ = base_loss(_EpsRecorder(s, x0), s, x0, 0, RngState(3), need_grad=False)
    assert loss < 1e-20


def test_base_loss_zero_model_chi_square():
    s = make_schedule(20, 0.05)
    x0 = np.zeros((20_000, 2))
    loss, _ = base_loss(zero_model(2), s, x0, 0, RngState(1), need_grad=False)
    # E||eps||^2 = d = 2, standard error 2/sqrt(20000) = 0.014
    assert abs(loss - 2.0) < 0.06


def test_base_loss_empty():
    with pytest.raises(InvalidArgumentError):
        base_loss(small_denoiser(), make_schedule(4), np.zeros((0, 2)), 0, RngState(0))


def test_base_loss_gradient_matches_fd():
    m = small_denoiser(seed=2)
    s = make_schedule(10, 0.05)
    x0, c = sample_mixture(RngState(5), 16, n_modes=3)
    rng = RngState(9)
    _, grads = base_loss(m, s, x0, c, rng.copy())
    g = np.concatenate([p.ravel() for p in grads])
    probe = m.clone()

    def f(v):
        probe.set_flat(v)
        return base_loss(probe, s, x0, c, rng.copy(), need_grad=False)[0]

    coords = np.random.default_rng(0).choice(m.n_params, 20, replace=False)
    fd = finite_diff_grad(f, m.flat(), coords=coords)
    assert np.max(relative_error(g[coords], fd[coords])) < 1e-4


def test_ddim_step_zero_model_and_exact_noise(sched_hand):
    x2 = np.array([1.0])
    assert ddim_step(zero_model(), sched_hand, x2, 2, 0)[0] == pytest.approx(np.sqrt(0.81 / 0.49), abs=1e-15)
    x0, eps = np.array([0.4]), np.array([-1.2])
    x1 = np.sqrt(0.81) * x0 + np.sqrt(0.19) * eps
    oracle = FnModel(lambda x, tau, c: np.broadcast_to(eps, x.shape))
    assert abs(ddim_step(oracle, sched_hand, x1, 1, 0)[0] - x0[0]) < 1e-15
    with pytest.raises(InvalidArgumentError):
        ddim_step(zero_model(), sched_hand, x2, 0, 0)


def test_ddim_step_scripted_formula(shipped):
    model, s = shipped
    x_t, t, c = np.array([[1.1, -0.4], [-2.0, 3.0]]), 55, np.array([0, 6])
    eps = model.forward(x_t, t / s.T, c)
    a, ap = s.alpha[t], s.alpha[t - 1]
    expect = np.sqrt(ap) * (x_t - np.sqrt(1 - a) * eps) / np.sqrt(a) + np.sqrt(1 - ap) * eps
    assert np.allclose(ddim_step(model, s, x_t, t, c), expect, rtol=0, atol=1e-13)


def test_sample_zero_model_closed_form(sched_hand):
    tr = sample(zero_model(), sched_hand, np.array([1.0]), 0)
    assert len(tr) == 3 and tr.direction == "sampled"
    assert abs(tr.x0[0] - 1 / 0.7) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 60), st.floats(0.001, 0.9), st.floats(-5, 5))
def test_sample_zero_model_telescopes(T, target, xT):
    s = make_schedule(T, target)
    tr = sample(zero_model(), s, np.array([xT]), 0)
    expect = np.sqrt(s.alpha / s.alpha[-1]) * xT
    assert np.allclose(tr.states[:, 0], expect, rtol=1e-12, atol=1e-12)


def test_sample_deterministic():
    m, s = small_denoiser(seed=1), make_schedule(15, 0.05)
    xT = gaussian_sample(RngState(2), (4, 2))
    a = sample(m, s, xT, np.array([0, 1, 2, 0]))
    b = sample(m, s, xT, np.array([0, 1, 2, 0]))
    assert np.array_equal(a.states, b.states)


def test_sample_non_finite_input():
    with pytest.raises(NumericDomainError):
        sample(zero_model(), make_schedule(3), np.array([np.nan]), 0)


def test_trajectory_validation():
    with pytest.raises(InvalidArgumentError):
        Trajectory(states=np.zeros((2, 1)), direction="sampled", condition=0, T=2)
    with pytest.raises(InvalidArgumentError):
        Trajectory(states=np.zeros((3, 1)), direction="sideways", condition=0, T=2)


def test_mixture_labels_and_spread():
    x, lab = sample_mixture(RngState(0), 4000, n_modes=8, radius=4.0, std=0.3)
    modes = mixture_modes(8, 4.0)
    assert np.allclose(np.linalg.norm(modes, axis=1), 4.0)
    resid = x - modes[lab]
    assert abs(resid.std() - 0.3) < 0.02
    assert set(np.unique(lab)) == set(range(8))
