import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rvdecay.decay_scale import DecayScale, Mode, asymptotic_F_inv, eval_F, eval_F_inv, eval_fF_inv
from rvdecay.errors import DomainError
from rvdecay.nonlinearity import Family, NonlinearityModel

CUBE = NonlinearityModel(beta=3.0)
SQUARE = NonlinearityModel(beta=2.0)
CLOSED = DecayScale(CUBE)
NUMERIC = DecayScale(CUBE, mode=Mode.NUMERIC)
LOG1 = NonlinearityModel(Family.POWER_LOG_LOGLOG, beta=3.0, beta1=1.0, crossover=0.05)


def closed_F_inv(t, a=1.0, beta=3.0):
    return (1.0 + a * (beta - 1.0) * t) ** (-1.0 / (beta - 1.0))


@pytest.mark.parametrize("scale", [CLOSED, NUMERIC], ids=["closed", "numeric"])
@pytest.mark.parametrize(
    "fn,arg,expected",
    [
        (eval_F, 0.5, 1.5),
        (eval_F, 1.0, 0.0),
        (eval_F_inv, 0.0, 1.0),
        (eval_F_inv, 4.0, 1.0 / 3.0),
        (eval_F_inv, 1.5, 0.5),
        (eval_fF_inv, 0.0, 1.0),
        (eval_fF_inv, 4.0, 1.0 / 27.0),
        (eval_fF_inv, 1.5, 0.125),
    ],
)
def test_cube_examples(scale, fn, arg, expected):
    assert fn(scale, arg) == pytest.approx(expected, rel=1e-10, abs=1e-15)


@pytest.mark.parametrize("mode", [Mode.CLOSED_FORM, Mode.NUMERIC])
def test_square_example(mode):
    assert eval_F(DecayScale(SQUARE, mode=mode), 0.25) == pytest.approx(3.0, rel=1e-10)


def test_F_above_one_is_negative():
    assert eval_F(NUMERIC, 2.0) == pytest.approx(-(1 - 0.25) / 2, rel=1e-10)
    assert eval_F(CLOSED, 2.0) == pytest.approx(-0.375, rel=1e-14)


@pytest.mark.parametrize("scale", [CLOSED, NUMERIC], ids=["closed", "numeric"])
def test_domain_errors(scale):
    for x in (0.0, -1.0, math.nan):
        with pytest.raises(DomainError):
            eval_F(scale, x)
    for t in (-1e-9, math.nan, math.inf):
        with pytest.raises(DomainError):
            eval_F_inv(scale, t)
        with pytest.raises(DomainError):
            eval_fF_inv(scale, t)


def test_closed_form_needs_unextended_power():
    with pytest.raises(DomainError):
        DecayScale(LOG1, mode=Mode.CLOSED_FORM)
    with pytest.raises(DomainError):
        DecayScale(NonlinearityModel(beta=3.0, crossover=2.0), mode=Mode.CLOSED_FORM)


def test_numeric_matches_closed_form_grid():
    t = np.concatenate([[0.0], np.geomspace(1e-6, 1e6, 999)])
    num = NUMERIC.F_inv(t)
    assert np.max(np.abs(num / closed_F_inv(t) - 1)) < 1e-8
    back = NUMERIC.F(num)
    mask = t > 0
    assert np.max(np.abs(back[mask] / t[mask] - 1)) < 1e-8


@pytest.mark.parametrize("a,beta", [(1.0, 1.5), (2.0, 3.0), (0.5, 5.0)])
def test_numeric_matches_closed_form_other_powers(a, beta):
    m = NonlinearityModel(a=a, beta=beta)
    s = DecayScale(m, mode=Mode.NUMERIC)
    t = np.geomspace(1e-3, 1e6, 40)
    assert np.max(np.abs(s.F_inv(t) / closed_F_inv(t, a, beta) - 1)) < 1e-8


def test_fF_inv_is_minus_derivative():
    s = DecayScale(LOG1)
    for t in (1.0, 1e2, 1e4):
        h = 1e-4 * t
        fd = -(s.F_inv(t + h) - s.F_inv(t - h)) / (2 * h)
        assert s.fF_inv(t) == pytest.approx(fd, rel=1e-6)


@given(t=st.floats(min_value=0.0, max_value=1e8))
@settings(max_examples=100, deadline=None)
def test_round_trip_log_family(t):
    s = DecayScale(LOG1)
    x = s.F_inv(t)
    assert 0 < x <= 1
    assert s.F(x) == pytest.approx(t, rel=1e-9, abs=1e-12)


@given(t1=st.floats(min_value=0.0, max_value=1e7), t2=st.floats(min_value=0.0, max_value=1e7))
@settings(max_examples=100, deadline=None)
def test_F_inv_monotone(t1, t2):
    s = DecayScale(LOG1)
    lo, hi = sorted((t1, t2))
    assert s.F_inv(hi) <= s.F_inv(lo)


def test_F_monotone_and_unbounded():
    s = DecayScale(LOG1)
    xs = np.geomspace(1.0, 1e-14, 200)
    F = s.F(xs)
    assert F[0] == 0.0
    assert np.all(np.diff(F) > 0)
    assert F[-1] > 1e20


def test_lazy_extension_beyond_table():
    s = DecayScale(CUBE, mode=Mode.NUMERIC, x_min=1e-3)
    assert s.F_inv(1e12) == pytest.approx(closed_F_inv(1e12), rel=1e-8)
    assert s.x_min < closed_F_inv(1e12)


@pytest.mark.parametrize(
    "model,t,expected",
    [
        (CUBE, 1e6, math.sqrt(0.5) * 1e-3),
        (NonlinearityModel(a=2.0, beta=3.0), 1e6, 5e-4),
    ],
)
def test_asymptotic_examples(model, t, expected):
    est = asymptotic_F_inv(DecayScale(model), t)
    assert est.value == pytest.approx(expected, rel=1e-12)
    assert not est.below_floor


def test_asymptotic_floor_flag():
    assert asymptotic_F_inv(CLOSED, 2.0).below_floor


def test_asymptotic_log_family_matches_display():
    s = DecayScale(LOG1)
    t = 1e8
    assert s.asymptotic_F_inv(t).value == pytest.approx(s.powerloglog_display(t), rel=1e-12)


def test_asymptotic_consistency_pure_power():
    ts = [1e2, 1e3, 1e4, 1e5, 1e6]
    errs = [abs(asymptotic_F_inv(CLOSED, t).value / eval_F_inv(CLOSED, t) - 1) for t in ts]
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-2


def test_numeric_inverse_is_fast():
    t = np.geomspace(1e-3, 1e6, 1000)
    start = time.perf_counter()
    DecayScale(CUBE, mode=Mode.NUMERIC).F_inv(t)
    assert time.perf_counter() - start < 1.0
