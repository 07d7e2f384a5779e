import math

import numpy as np
import pytest
import scipy.special as sc
from hypothesis import given, settings
from hypothesis import strategies as st

from natgeo.errors import DomainError
from natgeo.special import digamma, polygamma, tetragamma, trigamma

EULER_GAMMA = 0.57721566490153286


def test_known_values():
    assert polygamma(0, 1.0) == pytest.approx(-EULER_GAMMA, abs=1e-14)
    assert polygamma(1, 1.0) == pytest.approx(math.pi ** 2 / 6, abs=1e-14)
    # psi''(1) = -2 zeta(3)
    assert polygamma(2, 1.0) == pytest.approx(-2.4041138063191885, abs=1e-13)


def test_tetragamma_recurrence():
    assert polygamma(2, 2.0) == pytest.approx(polygamma(2, 1.0) + 2.0, abs=1e-12)


def test_trigamma_is_derivative_of_digamma():
    x, h = 2.5, 1e-5
    fd = (digamma(x + h) - digamma(x - h)) / (2 * h)
    assert trigamma(x) == pytest.approx(fd, abs=1e-8)


def test_tetragamma_is_derivative_of_trigamma():
    x, h = 0.7, 1e-5
    fd = (trigamma(x + h) - trigamma(x - h)) / (2 * h)
    assert tetragamma(x) == pytest.approx(fd, rel=1e-7)


@pytest.mark.parametrize("order", [0, 1, 2])
def test_against_reference_grid(order):
    # absolute 1e-10 where the value is O(1); near zero the magnitude of
    # psi' and psi'' is ~1e6..1e9 so the bound is relative there
    for x in np.geomspace(1e-3, 1e3, 200):
        ref = float(sc.polygamma(order, x))
        assert abs(polygamma(order, x) - ref) <= max(1e-10, 1e-14 * abs(ref))


@given(st.floats(min_value=1e-2, max_value=50.0))
@settings(max_examples=60, deadline=None)
def test_recurrence_property(x):
    assert polygamma(0, x + 1) == pytest.approx(polygamma(0, x) + 1 / x, abs=1e-9)
    assert polygamma(1, x + 1) == pytest.approx(polygamma(1, x) - 1 / x ** 2, rel=1e-11, abs=1e-10)


@pytest.mark.parametrize("x", [0.0, -1.0, -0.5])
def test_domain(x):
    with pytest.raises(DomainError):
        polygamma(1, x)


def test_bad_order():
    with pytest.raises(ValueError):
        polygamma(3, 1.0)
