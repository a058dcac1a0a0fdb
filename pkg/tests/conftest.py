"""Shared fixtures and stub models."""

import sys
from pathlib import Path

import numpy as np
import pytest

from invdpo.checkpoint import load_checkpoint
from invdpo.config import parse_config
from invdpo.denoiser import Denoiser
from invdpo.numerics import RngState
from invdpo.schedule import NoiseSchedule, make_schedule

ROOT = Path(__file__).resolve().parent.parent
SHIPPED_CKPT = ROOT / "checkpoints" / "base.idpo"
SHIPPED_PAIRS = ROOT / "checkpoints" / "pairs.idpr"
TOY_CFG = ROOT / "configs" / "toy.cfg"


class FnModel:
    """Stub denoiser whose output is ``fn(x, tau, c)``; backward returns no parameters."""

    def __init__(self, fn, data_dim=1):
        self.fn = fn
        self.data_dim = data_dim
        self.params = []

    def forward(self, x, tau, c, keep=False):
        x = np.asarray(x, dtype=np.float64)
        n = 1 if x.ndim == 1 else x.shape[0]
        tau = np.broadcast_to(np.asarray(tau, dtype=np.float64), (n,))
        out = self.fn(np.atleast_2d(x), tau, c)
        return out[0] if x.ndim == 1 else out

    def backward(self, grad_out):
        return []

    def clone(self):
        return self

    def param_hash(self):
        return "stub"


def zero_model(data_dim=1):
    return FnModel(lambda x, tau, c: np.zeros_like(x), data_dim)


def linear_model(a, data_dim=1):
    return FnModel(lambda x, tau, c: a * x, data_dim)


def small_denoiser(seed=0, hidden=16, time_dim=4, n_conditions=3, data_dim=2):
    return Denoiser.init_random(
        RngState(seed), data_dim=data_dim, n_conditions=n_conditions, hidden=hidden, time_dim=time_dim
    )


def perturbed(model, scale, seed):
    out = model.clone()
    out.set_flat(model.flat() + scale * RngState(seed).normal(model.n_params))
    return out


@pytest.fixture
def toy_cfg():
    return parse_config(TOY_CFG.read_text())


@pytest.fixture(scope="session")
def shipped():
    return load_checkpoint(SHIPPED_CKPT)


@pytest.fixture
def sched_small():
    return make_schedule(10, 0.05)


@pytest.fixture
def sched_hand():
    return NoiseSchedule(T=2, alpha=np.array([1.0, 0.81, 0.49]))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[0][2:])):
            terminalreporter.write_line(line)
