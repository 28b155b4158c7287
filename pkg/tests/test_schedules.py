import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from autosparse.schedules import (
    KINDS,
    AnnealSchedule,
    LrSchedule,
    alpha_at_epoch,
    cosine_decay,
    exponential_decay,
    linear_decay,
    lr_at_epoch,
    sigmoid_cosine_decay,
    sigmoid_decay,
)


def _logistic(x):
    return 1.0 / (1.0 + math.exp(-x))


@pytest.mark.parametrize("i,T,expected", [(0, 100, 1.0), (100, 100, 0.0), (50, 100, 0.5)])
def test_cosine_examples(i, T, expected):
    assert cosine_decay(i, T) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("i,expected", [
    (0, 1 - _logistic(-6)),
    (100, 1 - _logistic(6)),
    (50, 0.5),
])
def test_sigmoid_examples(i, expected):
    assert sigmoid_decay(i, 100, -6, 6) == pytest.approx(expected, abs=1e-12)


def test_sigmoid_endpoint_digits():
    assert f"{sigmoid_decay(0, 100, -6, 6):.6f}" == "0.997527"
    assert f"{sigmoid_decay(100, 100, -6, 6):.6f}" == "0.002473"


@pytest.mark.parametrize("i", [0, 50, 90])
def test_sigmoid_cosine_is_max_of_components(i):
    c = (1 + math.cos(math.pi * i / 100)) / 2
    s = 1 - _logistic(-6 + 12 * i / 100)
    assert sigmoid_cosine_decay(i, 100, -6, 6) == pytest.approx(max(c, s), abs=1e-15)


@pytest.mark.parametrize("t,beta,expected", [(0, 1.0, 1.0), (1, 1.0, math.exp(-1)), (3, 0.5, math.exp(-1.5))])
def test_exponential_examples(t, beta, expected):
    assert exponential_decay(t, beta) == pytest.approx(expected, abs=1e-15)


def test_linear_midpoint():
    assert linear_decay(25, 100) == 0.75


@pytest.mark.parametrize("call", [
    lambda: cosine_decay(0, 0),
    lambda: cosine_decay(101, 100),
    lambda: cosine_decay(-1, 100),
    lambda: sigmoid_decay(10, 100, 6, -6),
    lambda: exponential_decay(1, 0.0),
    lambda: exponential_decay(-1, 1.0),
])
def test_invalid_arguments(call):
    with pytest.raises(ValueError):
        call()


@pytest.mark.parametrize("kind", [k for k in KINDS if k != "fixed"])
@pytest.mark.parametrize("T", [1, 2, 7, 100, 512])
def test_monotone_non_increasing(kind, T):
    sched = AnnealSchedule(kind)
    vals = [sched.scale(i, T) for i in range(T + 1)]
    assert all(0.0 <= v <= 1.0 for v in vals)
    assert all(b <= a for a, b in zip(vals, vals[1:]))


def test_fixed_is_constant():
    assert {AnnealSchedule("fixed").scale(i, 10) for i in range(11)} == {1.0}


@given(T=st.integers(1, 512), data=st.data())
def test_cosine_symmetry(T, data):
    i = data.draw(st.integers(0, T))
    assert cosine_decay(i, T) + cosine_decay(T - i, T) == pytest.approx(1.0, abs=1e-12)


@given(T=st.integers(1, 512), data=st.data())
def test_sigmoid_cosine_dominates(T, data):
    i = data.draw(st.integers(0, T))
    sc = sigmoid_cosine_decay(i, T)
    assert sc >= cosine_decay(i, T) and sc >= sigmoid_decay(i, T)


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        AnnealSchedule("step")


def test_schedule_dict_round_trip():
    s = AnnealSchedule("exponential", beta=0.3)
    assert AnnealSchedule.from_dict(s.to_dict()) == s


@pytest.mark.parametrize("alpha0,kind,e,zero_from,expected", [
    (0.75, "cosine", 0, 90, 0.75),
    (0.75, "cosine", 95, 90, 0.0),
    (0.5, "fixed", 40, None, 0.5),
])
def test_alpha_at_epoch_examples(alpha0, kind, e, zero_from, expected):
    assert alpha_at_epoch(alpha0, AnnealSchedule(kind), e, 100, zero_from) == expected


@given(z=st.integers(0, 100), data=st.data())
def test_alpha_zero_from_is_exact(z, data):
    e = data.draw(st.integers(z, 100))
    a = alpha_at_epoch(0.9, AnnealSchedule("sigmoid_cosine"), e, 100, z)
    assert a == 0.0 and not math.copysign(1.0, a) < 0


def test_alpha0_out_of_range():
    with pytest.raises(ValueError):
        alpha_at_epoch(1.5, AnnealSchedule(), 0, 10)


@pytest.mark.parametrize("sched,e,expected", [
    (LrSchedule(0.256, 5, 100), 5, 0.256),
    (LrSchedule(0.256, 5, 100), 100, 0.0),
    (LrSchedule(0.2, 4, 100), 2, 0.1),
])
def test_lr_examples(sched, e, expected):
    assert lr_at_epoch(sched, e) == pytest.approx(expected, abs=1e-15)


def test_lr_shape():
    sched = LrSchedule(0.256, 5, 100)
    grid = np.linspace(0, 100, 2001)
    lrs = np.array([lr_at_epoch(sched, e) for e in grid])
    assert np.all(lrs >= 0)
    warm, decay = lrs[grid <= 5], lrs[grid >= 5]
    assert np.all(np.diff(warm) > 0)
    assert np.all(np.diff(decay) <= 1e-15)
    # cosine midpoint of the decay phase
    assert lr_at_epoch(sched, 52.5) == pytest.approx(0.128, abs=1e-12)
