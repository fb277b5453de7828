import math

import numpy as np
import pytest

from dfm.schedule import BetaSchedule, KappaSchedule


def test_beta_default_values():
    sched = BetaSchedule()
    assert sched.beta(0.0) == 0.0
    assert sched.beta(0.5) == pytest.approx(3.0)  # c * 1**a
    # monotone increasing on a grid
    ts = np.linspace(0.0, 0.99, 50)
    bs = sched.beta(ts)
    assert np.all(np.diff(bs) > 0)


def test_beta_cap_applies():
    sched = BetaSchedule(beta_cap=10.0)
    assert sched.beta(0.999) == 10.0
    assert sched.capped(0.999)
    assert not sched.capped(0.5)
    # derivative is zero in the capped region
    assert sched.beta_dot(0.999) == 0.0


def test_beta_domain_errors():
    sched = BetaSchedule()
    with pytest.raises(ValueError):
        sched.beta(1.0)
    with pytest.raises(ValueError):
        sched.beta(-0.01)
    with pytest.raises(ValueError):
        sched.beta_dot(0.0)
    with pytest.raises(ValueError):
        sched.beta_dot(1.0)


@pytest.mark.parametrize("a", [0.9, 2.0])
@pytest.mark.parametrize("t", [0.1, 0.37, 0.5, 0.8])
def test_beta_dot_matches_finite_difference(a, t):
    sched = BetaSchedule(c=2.5, a=a)
    h = 1e-7
    fd = (sched.beta(t + h) - sched.beta(t - h)) / (2 * h)
    assert sched.beta_dot(t) == pytest.approx(fd, rel=1e-5)


def test_beta_dot_diverges_at_zero_for_sublinear_exponent():
    sched = BetaSchedule(a=0.9)
    assert sched.beta_dot(1e-8) > sched.beta_dot(1e-4) > sched.beta_dot(1e-2)


def test_beta_worked_point():
    # c = ln 2, a = 1/(4 ln 2): at t = 1/2 this gives beta = ln 2 and
    # beta_dot = exactly 1
    c = math.log(2.0)
    sched = BetaSchedule(c=c, a=1.0 / (4.0 * c))
    assert sched.beta(0.5) == pytest.approx(c, abs=1e-15)
    assert sched.beta_dot(0.5) == pytest.approx(1.0, abs=1e-12)


def test_beta_rejects_bad_parameters():
    for kwargs in ({"c": 0.0}, {"a": -1.0}, {"beta_cap": 0.0}):
        with pytest.raises(ValueError):
            BetaSchedule(**kwargs)


def test_kappa_linear():
    ks = KappaSchedule()
    assert ks.kappa(0.0) == 0.0
    assert ks.kappa(1.0) == 1.0
    assert ks.kappa(0.25) == 0.25
    assert ks.kappa_dot(0.7) == 1.0
    with pytest.raises(ValueError):
        ks.kappa(1.5)
    with pytest.raises(ValueError):
        ks.kappa_dot(-0.1)


def test_kappa_unknown_family_rejected():
    with pytest.raises(ValueError):
        KappaSchedule(kind="cosine")


def test_schedules_accept_arrays():
    sched = BetaSchedule()
    ts = np.array([0.1, 0.5, 0.9])
    assert sched.beta(ts).shape == (3,)
    assert sched.beta_dot(ts).shape == (3,)
    ks = KappaSchedule()
    assert ks.kappa(ts).shape == (3,)
