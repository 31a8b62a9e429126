import math

import mpmath
import numpy as np
import pytest
from hypothesis import example, given
from hypothesis import strategies as st

from anisocox.special import (
    UNDERFLOW_ARG,
    correlation_table,
    matern_correlation,
    matern_correlation_derivative,
)


def mp_corr(x, nu):
    x, nu = mpmath.mpf(x), mpmath.mpf(nu)
    return float(2 ** (1 - nu) / mpmath.gamma(nu) * x ** nu * mpmath.besselk(nu, x))


@pytest.mark.parametrize("nu", [0.05, 0.3, 0.5, 0.8, 1.0, 1.5, 2.3, 5.0])
def test_matches_mpmath(nu):
    x = np.array([1e-6, 1e-3, 0.01, 0.2, 1.0, 3.7, 12.0, 60.0])
    got = matern_correlation(x, nu)
    want = np.array([mp_corr(v, nu) for v in x])
    np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-14)


def test_zero_and_underflow():
    assert matern_correlation(np.array([0.0]), 0.7)[0] == 1.0
    assert matern_correlation(np.array([UNDERFLOW_ARG * 1.01]), 0.7)[0] == 0.0
    # continuity at the origin
    assert matern_correlation(np.array([1e-300]), 1.5)[0] == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("nu", [0.05, 0.5, 1.3, 5.0])
def test_derivative_against_mpmath(nu):
    x = np.array([0.05, 0.4, 1.1, 4.0])
    f = lambda t: 2 ** (1 - nu) / mpmath.gamma(nu) * t ** nu * mpmath.besselk(nu, t)
    want = [float(mpmath.diff(f, mpmath.mpf(v))) for v in x]
    np.testing.assert_allclose(matern_correlation_derivative(x, nu), want, rtol=1e-9)


@given(st.floats(0.02, 6.0), st.floats(1e-6, 600.0))
def test_table_matches_direct(nu, x):
    got = correlation_table(nu)(np.array([x]))[0]
    assert got == pytest.approx(matern_correlation(np.array([x]), nu)[0], abs=1e-10)


@given(st.floats(0.02, 6.0), st.floats(0.0, 50.0), st.floats(0.0, 50.0))
@example(nu=1.546875, a=1.401298464324817e-45, b=0.0)
def test_monotone_and_bounded(nu, a, b):
    lo, hi = sorted((a, b))
    v = matern_correlation(np.array([lo, hi]), nu)
    assert 0.0 <= v[1] <= v[0] <= 1.0 + 1e-12


def test_known_closed_forms():
    x = np.linspace(0.0, 10.0, 11)
    np.testing.assert_allclose(matern_correlation(x, 0.5), np.exp(-x), rtol=1e-14)
    np.testing.assert_allclose(matern_correlation(x, 1.5), (1 + x) * np.exp(-x), rtol=1e-14)
    np.testing.assert_allclose(matern_correlation(x, 2.5), (1 + x + x ** 2 / 3) * np.exp(-x), rtol=1e-13)
    assert math.isfinite(matern_correlation(np.array([700.0]), 5.0)[0])
