import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from invdpo.errors import InvalidArgumentError
from invdpo.schedule import NoiseSchedule, make_schedule, snr_log


def test_two_endpoints():
    assert np.array_equal(make_schedule(1, 0.25).alpha, [1.0, 0.25])


def test_log_linear_midpoint():
    # exp(mean(log 1, log 0.25)) = 0.5
    assert np.allclose(make_schedule(2, 0.25).alpha, [1.0, 0.5, 0.25], rtol=0, atol=1e-15)


@pytest.mark.parametrize("T,target", [(0, 0.5), (-3, 0.5), (4, 0.0), (4, 1.0), (4, 1.5)])
def test_invalid(T, target):
    with pytest.raises(InvalidArgumentError):
        make_schedule(T, target)


def test_snr_values():
    s = NoiseSchedule(T=2, alpha=np.array([1.0, 0.8, 0.5]))
    assert snr_log(s, 2) == 0.0
    assert snr_log(s, 1) == pytest.approx(math.log(4), abs=1e-12)
    with pytest.raises(InvalidArgumentError):
        snr_log(s, 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 400), st.floats(1e-4, 0.999))
def test_schedule_invariants(T, target):
    s = make_schedule(T, target)
    assert s.alpha[0] == 1.0 and s.alpha[-1] == target
    assert np.all(np.diff(s.alpha) < 0)
    assert np.all(s.sigma == 0) and len(s.sigma) == T


def test_rejects_non_monotone_and_bad_start():
    with pytest.raises(InvalidArgumentError):
        NoiseSchedule(T=2, alpha=np.array([1.0, 0.5, 0.6]))
    with pytest.raises(InvalidArgumentError):
        NoiseSchedule(T=1, alpha=np.array([0.9, 0.5]))
    with pytest.raises(InvalidArgumentError):
        NoiseSchedule(T=2, alpha=np.array([1.0, 0.5]))


def test_arrays_read_only_and_equality():
    s = make_schedule(5, 0.1)
    with pytest.raises(ValueError):
        s.alpha[1] = 0.3
    assert s == make_schedule(5, 0.1)
    assert s != make_schedule(5, 0.2)


def test_check_step_range():
    s = make_schedule(4, 0.1)
    assert s.check_step(4) == 4
    for t in (0, 5):
        with pytest.raises(InvalidArgumentError):
            s.check_step(t)
