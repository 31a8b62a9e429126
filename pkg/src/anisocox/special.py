r"""Matérn correlation kernel built on the modified Bessel function of the second kind.

The isotropic Matérn correlation used throughout the package is

.. math::
    \rho_\nu(x) = \frac{2^{1-\nu}}{\Gamma(\nu)} x^\nu K_\nu(x),\qquad x\ge 0,

with :math:`\rho_\nu(0) = 1`.  Half-integer orders use the terminating
closed form of :math:`K_{n+1/2}`; other orders use a power series for small
arguments and the exponentially scaled AMOS routine (``scipy.special.kve``)
elsewhere.
"""

from functools import lru_cache
import math

import numpy as np
from scipy import special
from scipy.interpolate import CubicHermiteSpline

UNDERFLOW_ARG = 700.0
_SERIES_SWITCH = 1e-2
_TABLE_LOG_MIN = -15.0
_TABLE_STEP = 0.004


def _half_integer_order(nu):
    n = nu - 0.5
    if n >= 0 and abs(n - round(n)) < 1e-14 and round(n) <= 20:
        return int(round(n))
    return None


def _half_integer_corr(x, n):
    # K_{n+1/2}(x) = sqrt(pi/2x) e^{-x} sum_k (n+k)!/(k!(n-k)!) (2x)^{-k}
    nu = n + 0.5
    poly = np.zeros_like(x)
    for k in range(n + 1):
        c = math.factorial(n + k) / (math.factorial(k) * math.factorial(n - k)) / 2.0 ** k
        poly = poly + c * x ** (n - k)
    const = 2.0 ** (1.0 - nu) / math.gamma(nu) * math.sqrt(math.pi / 2.0)
    return const * poly * np.exp(-x)


def _series_corr(x, nu):
    """Small-argument series via K_nu = pi/(2 sin nu pi) (I_{-nu} - I_nu)."""
    q = 0.25 * x * x
    s_neg = np.zeros_like(x)
    s_pos = np.zeros_like(x)
    term_neg = np.full_like(x, 1.0 / math.gamma(1.0 - nu))
    term_pos = np.full_like(x, 1.0 / math.gamma(1.0 + nu))
    for k in range(40):
        s_neg += term_neg
        s_pos += term_pos
        term_neg = term_neg * q / ((k + 1) * (k + 1 - nu))
        term_pos = term_pos * q / ((k + 1) * (k + 1 + nu))
    # x^nu I_{-nu}(x) = 2^nu s_neg ; x^nu I_nu(x) = 2^-nu x^{2nu} s_pos
    knu = math.pi / (2.0 * math.sin(nu * math.pi)) * (
        2.0 ** nu * s_neg - 2.0 ** (-nu) * x ** (2 * nu) * s_pos
    )
    return 2.0 ** (1.0 - nu) / math.gamma(nu) * knu


def matern_correlation(x, nu):
    """Evaluate the Matérn correlation :math:`\\rho_\\nu(x)` elementwise.

    Parameters
    ----------
    x : array_like
        Nonnegative scaled distances ``2 sqrt(nu) r / alpha``.
    nu : float
        Positive smoothness.
    """
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    if nu <= 0:
        raise ValueError("smoothness nu must be positive")
    out = np.zeros_like(x)
    zero = x <= 0.0
    out[zero] = 1.0
    live = (~zero) & (x <= UNDERFLOW_ARG)
    n = _half_integer_order(nu)
    if n is not None:
        out[live] = _half_integer_corr(x[live], n)
    else:
        xs = x[live]
        vals = np.empty_like(xs)
        integer_order = abs(nu - round(nu)) < 1e-12
        if integer_order:
            small = xs < (1e-4 if nu >= 2 else 0.0)
            if small.any():
                vals[small] = 1.0 - xs[small] ** 2 / (4.0 * (nu - 1.0))
        else:
            small = xs < _SERIES_SWITCH
            if small.any():
                vals[small] = _series_corr(xs[small], nu)
        big = ~small
        if big.any():
            xb = xs[big]
            logv = (
                (1.0 - nu) * math.log(2.0)
                - special.gammaln(nu)
                + nu * np.log(xb)
                + np.log(special.kve(nu, xb))
                - xb
            )
            vals[big] = np.exp(logv)
        # the series can round a few ulps above 1 at tiny arguments
        out[live] = np.minimum(vals, 1.0)
    return out[0] if scalar else out


def matern_correlation_derivative(x, nu):
    """Derivative of :math:`\\rho_\\nu` with respect to ``x``.

    Uses d/dx [x^nu K_nu(x)] = -x^nu K_{nu-1}(x).
    """
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    live = (x > 0) & (x <= UNDERFLOW_ARG)
    xl = x[live]
    logv = (
        (1.0 - nu) * math.log(2.0)
        - special.gammaln(nu)
        + nu * np.log(xl)
        + np.log(special.kve(nu - 1.0, xl))
        - xl
    )
    out[live] = -np.exp(logv)
    return out


class CorrelationTable:
    """Cubic Hermite table of the Matérn correlation on a log-argument grid.

    Used inside likelihood loops where the same ``nu`` is evaluated on tens of
    thousands of distances per call.  Nodes carry exact values and exact
    derivatives, so the interpolation error is below 1e-11 in absolute terms.
    """

    def __init__(self, nu):
        self.nu = float(nu)
        self._exact = _half_integer_order(self.nu) is not None
        if self._exact:
            return
        t = np.arange(_TABLE_LOG_MIN, math.log(UNDERFLOW_ARG) + _TABLE_STEP, _TABLE_STEP)
        x = np.exp(t)
        y = matern_correlation(x, self.nu)
        dy = matern_correlation_derivative(x, self.nu) * x
        self._spline = CubicHermiteSpline(t, y, dy, extrapolate=False)
        self._x_min = math.exp(t[0])
        self._x_max = x[-1]

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self._exact:
            return matern_correlation(x, self.nu)
        out = np.empty_like(x)
        mid = (x >= self._x_min) & (x <= self._x_max)
        with np.errstate(divide="ignore"):
            out[mid] = self._spline(np.log(x[mid]))
        rest = ~mid
        if rest.any():
            out[rest] = matern_correlation(x[rest], self.nu)
        return out


@lru_cache(maxsize=32)
def correlation_table(nu):
    return CorrelationTable(nu)
