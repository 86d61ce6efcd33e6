"""Special functions used by the mixture model.

The log-gamma function is a Lanczos approximation (g = 7, nine terms) with
reflection below 0.5.  Digamma/trigamma, the normal CDF and its inverse and
the regularized upper incomplete gamma come from :mod:`scipy.special`.
"""

import math

import numpy as np
from scipy import special as _sp

__all__ = [
    "gammaln",
    "betaln",
    "digamma",
    "trigamma",
    "norm_cdf",
    "norm_sf",
    "norm_ppf",
    "norm_logpdf",
    "chi2_sf",
]

_LANCZOS_G = 7.0
_LANCZOS_COEF = np.array([
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
])
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_LOG_PI = math.log(math.pi)


def _lanczos_lgamma(x):
    # valid for x >= 0.5
    z = x - 1.0
    series = np.full_like(z, _LANCZOS_COEF[0])
    for i in range(1, _LANCZOS_COEF.size):
        series = series + _LANCZOS_COEF[i] / (z + i)
    t = z + _LANCZOS_G + 0.5
    return _HALF_LOG_2PI + (z + 0.5) * np.log(t) - t + np.log(series)


_COEF_LIST = [float(c) for c in _LANCZOS_COEF]


def _lgamma_scalar(x):
    if x < 0.5:
        if x == math.floor(x):
            return math.inf
        return math.log(math.pi / abs(math.sin(math.pi * x))) - _lgamma_scalar(1.0 - x)
    if x == 1.0 or x == 2.0:
        return 0.0
    z = x - 1.0
    series = _COEF_LIST[0]
    for i in range(1, 9):
        series += _COEF_LIST[i] / (z + i)
    t = z + _LANCZOS_G + 0.5
    return _HALF_LOG_2PI + (z + 0.5) * math.log(t) - t + math.log(series)


def gammaln(x):
    """Natural log of ``|Gamma(x)|``.

    Accepts scalars or arrays; returns the same shape.  Poles (non-positive
    integers) give ``inf``.
    """
    if isinstance(x, (float, int, np.floating)):
        return _lgamma_scalar(float(x))
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    out = np.empty_like(x)

    hi = x >= 0.5
    if np.any(hi):
        out[hi] = _lanczos_lgamma(x[hi])
    lo = ~hi
    if np.any(lo):
        xl = x[lo]
        # reflection: Gamma(x) Gamma(1-x) = pi / sin(pi x)
        with np.errstate(divide="ignore"):
            s = np.abs(np.sin(np.pi * xl))
            out[lo] = _LOG_PI - np.log(s) - _lanczos_lgamma(1.0 - xl)
        out[lo & (x == np.floor(x))] = np.inf
    out[(x == 1.0) | (x == 2.0)] = 0.0  # exact zeros keep Beta(1, 1) at density 1
    return out[0] if scalar else out


def betaln(a, b):
    """Log of the beta function B(a, b) for positive arguments."""
    if isinstance(a, (float, int, np.floating)) and isinstance(b, (float, int, np.floating)):
        return gammaln(a) + gammaln(b) - gammaln(float(a) + float(b))
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return gammaln(a) + gammaln(b) - gammaln(a + b)


def digamma(x):
    return _sp.digamma(x)


def trigamma(x):
    # Hurwitz zeta(2, x) is the trigamma function and skips polygamma's wrapper
    return _sp.zeta(2.0, x)


def norm_cdf(x):
    return _sp.ndtr(x)


def norm_sf(x):
    """Upper tail ``1 - Phi(x)`` without cancellation."""
    return _sp.ndtr(-np.asarray(x, dtype=float))


def norm_ppf(q):
    return _sp.ndtri(q)


def norm_logpdf(x, mean=0.0, var=1.0):
    x = np.asarray(x, dtype=float)
    return -0.5 * (np.log(2.0 * np.pi * var) + (x - mean) ** 2 / var)


def chi2_sf(x, df):
    """Upper tail probability of a chi-square variable with ``df`` degrees of freedom."""
    x = np.asarray(x, dtype=float)
    return _sp.gammaincc(0.5 * df, 0.5 * np.maximum(x, 0.0))
