"""Gamma distributions and two-gamma convolutions with integer shapes.

Everything downstream (occupation-time densities, transition kernels) is
assembled from four scalar functions:

* ``gamma_cdf(x, a, b)`` / ``gamma_pdf(x, a, b)`` -- Gamma(a, rate b), with
  shape ``a = 0`` denoting the distribution degenerate at 0.
* ``conv_cdf`` / ``conv_pdf`` -- the law of Gamma(a1, b1) + Gamma(a2, b2).
* ``cdf_diff`` -- conv_cdf at shape ``a1`` minus conv_cdf at ``a1 + 1``,
  i.e. the probability that the sum lands below ``x`` but exceeds ``x``
  after one more Exp(b1) summand.

For distinct rates the convolution has an exact partial-fraction form: a
signed mixture of single-rate gamma laws.  The mixture weights alternate in
sign and blow up as the rates approach each other, so the evaluation

* merges the two components into a single gamma when the rates agree to
  ``RATE_MERGE_RTOL`` (exact at equality, bias well under 1e-7 for the
  shape range used here),
* computes weights in log space with exactly rounded summation, and
* falls back to adaptive quadrature of the defining convolution integral
  whenever the estimated cancellation exceeds ``CANCEL_GUARD`` units of
  roundoff.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import integrate, special

__all__ = [
    "gamma_cdf",
    "gamma_pdf",
    "conv_cdf",
    "conv_pdf",
    "cdf_diff",
]

# Relative rate gap below which the convolution is evaluated as a single
# Gamma(a1 + a2, (b1 + b2) / 2).
RATE_MERGE_RTOL = 1e-8

# Fall back to quadrature when sum(|terms|) / |sum(terms)| exceeds this.
CANCEL_GUARD = 1e8

_TABLE_SIZE = 4096
_LOG_FACTORIAL = special.gammaln(np.arange(1, _TABLE_SIZE + 2))  # log(k!), k=0..


def _log_factorial(k: int) -> float:
    if k < _TABLE_SIZE:
        return float(_LOG_FACTORIAL[k])
    return float(special.gammaln(k + 1))


def _log_binom(n: int, k: int) -> float:
    return _log_factorial(n) - _log_factorial(k) - _log_factorial(n - k)


def _check_shape(a, name: str) -> int:
    if isinstance(a, float) and not a.is_integer():
        raise ValueError(f"{name} must be a nonnegative integer, got {a!r}")
    a = int(a)
    if a < 0:
        raise ValueError(f"{name} must be a nonnegative integer, got {a!r}")
    return a


def _check_rate(b, name: str) -> float:
    b = float(b)
    if not np.isfinite(b) or b <= 0.0:
        raise ValueError(f"{name} must be a positive rate, got {b!r}")
    return b


def gamma_cdf(x, shape, rate):
    """CDF of Gamma(shape, rate); shape 0 is the unit mass at 0."""
    shape = _check_shape(shape, "shape")
    rate = _check_rate(rate, "rate")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0.0):
        raise ValueError("x must be nonnegative")
    if shape == 0:
        out = np.ones_like(x)
    else:
        out = special.gammainc(shape, rate * x)
    return out if out.ndim else float(out)


def gamma_pdf(x, shape, rate):
    """PDF of Gamma(shape, rate) for integer shape >= 1."""
    shape = _check_shape(shape, "shape")
    rate = _check_rate(rate, "rate")
    if shape == 0:
        raise ValueError("the degenerate shape-0 law has no density")
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0.0):
        raise ValueError("x must be positive")
    out = np.exp(shape * math.log(rate) + (shape - 1) * np.log(x)
                 - rate * x - _log_factorial(shape - 1))
    return out if out.ndim else float(out)


def _pf_weights(a1: int, b1: float, a2: int, b2: float):
    """Partial-fraction mixture weights of the two-gamma convolution.

    Returns (w1, w2) with len a1 and a2 such that the convolution pdf is
    sum_i w1[i-1] g(x, i, b1) + sum_j w2[j-1] g(x, j, b2), or None when a
    weight overflows double precision.
    """
    log_abs_r = math.log(abs(b2 - b1))
    log_b1, log_b2 = math.log(b1), math.log(b2)

    def weights(a_here, log_b_here, a_other, log_b_other, sign_gap):
        # sign_gap = sign(b_other - b_here); weight index i runs 1..a_here
        w = np.empty(a_here)
        for i in range(1, a_here + 1):
            k = a_here - i
            logw = (_log_binom(a_other + k - 1, k) + k * log_b_here
                    + a_other * log_b_other - (a_other + k) * log_abs_r)
            if logw > 700.0:
                return None
            sign = (-1.0) ** k * sign_gap ** (a_other + k)
            w[i - 1] = sign * math.exp(logw)
        return w

    sign_r = 1.0 if b2 > b1 else -1.0
    w1 = weights(a1, log_b1, a2, log_b2, sign_r)
    w2 = weights(a2, log_b2, a1, log_b1, -sign_r) if w1 is not None else None
    if w1 is None or w2 is None:
        return None
    return w1, w2


def _pf_eval(x, a1, b1, a2, b2, basis):
    """Signed partial-fraction sum; basis is gamma_cdf or gamma_pdf.

    Returns (value, cancellation) or None when weights overflow.
    """
    w = _pf_weights_cached(a1, b1, a2, b2)
    if w is None:
        return None
    w1, w2 = w
    terms = []
    for i in range(1, a1 + 1):
        terms.append(w1[i - 1] * basis(x, i, b1))
    for j in range(1, a2 + 1):
        terms.append(w2[j - 1] * basis(x, j, b2))
    total = math.fsum(terms)
    gross = math.fsum(abs(t) for t in terms)
    cancel = gross / abs(total) if total != 0.0 else math.inf
    return total, cancel


def _pf_weights_cached(a1, b1, a2, b2, _cache={}):
    key = (a1, b1, a2, b2)
    if key not in _cache:
        if len(_cache) > 4096:
            _cache.clear()
        _cache[key] = _pf_weights(a1, b1, a2, b2)
    return _cache[key]


def _quad_points(a1, b1, a2, b2, x):
    pts = [p for p in ((a1 - 1) / b1 if a1 > 1 else None,
                       x - (a2 - 1) / b2 if a2 > 1 else None)
           if p is not None and 0.0 < p < x]
    return sorted(pts) or None


def _conv_cdf_quad(x, a1, b1, a2, b2):
    if a1 == 0:
        return float(gamma_cdf(x, a2, b2))
    f = lambda u: gamma_pdf(u, a1, b1) * (special.gammainc(a2, b2 * (x - u))
                                          if a2 > 0 else 1.0)
    val, _ = integrate.quad(f, 0.0, x, limit=200, epsabs=1e-13, epsrel=1e-11,
                            points=_quad_points(a1, b1, a2, b2, x))
    return val


def _conv_pdf_quad(x, a1, b1, a2, b2):
    if a1 == 0:
        return float(gamma_pdf(x, a2, b2))
    if a2 == 0:
        return float(gamma_pdf(x, a1, b1))
    f = lambda u: gamma_pdf(u, a1, b1) * gamma_pdf(x - u, a2, b2)
    val, _ = integrate.quad(f, 0.0, x, limit=200, epsabs=1e-13, epsrel=1e-11,
                            points=_quad_points(a1, b1, a2, b2, x))
    return val


def _merge_rates(b1, b2):
    return abs(b1 - b2) <= RATE_MERGE_RTOL * max(b1, b2)


def _validate_conv(x, shape1, rate1, shape2, rate2, positive_x):
    a1 = _check_shape(shape1, "shape1")
    a2 = _check_shape(shape2, "shape2")
    b1 = _check_rate(rate1, "rate1")
    b2 = _check_rate(rate2, "rate2")
    x = float(x)
    if positive_x:
        if x <= 0.0:
            raise ValueError("x must be positive")
    elif x < 0.0:
        raise ValueError("x must be nonnegative")
    return x, a1, b1, a2, b2


def conv_cdf(x, shape1, rate1, shape2, rate2):
    """CDF of Gamma(shape1, rate1) + Gamma(shape2, rate2) at x >= 0."""
    x, a1, b1, a2, b2 = _validate_conv(x, shape1, rate1, shape2, rate2, False)
    if a1 == 0:
        return float(gamma_cdf(x, a2, b2))
    if a2 == 0:
        return float(gamma_cdf(x, a1, b1))
    if x == 0.0:
        return 0.0
    if _merge_rates(b1, b2):
        return float(gamma_cdf(x, a1 + a2, 0.5 * (b1 + b2)))
    out = _pf_eval(x, a1, b1, a2, b2, gamma_cdf)
    if out is None or out[1] > CANCEL_GUARD:
        return min(max(_conv_cdf_quad(x, a1, b1, a2, b2), 0.0), 1.0)
    return min(max(out[0], 0.0), 1.0)


def conv_pdf(x, shape1, rate1, shape2, rate2):
    """PDF of Gamma(shape1, rate1) + Gamma(shape2, rate2) at x > 0."""
    x, a1, b1, a2, b2 = _validate_conv(x, shape1, rate1, shape2, rate2, True)
    if a1 + a2 == 0:
        raise ValueError("shape1 + shape2 must be at least 1")
    if a1 == 0:
        return float(gamma_pdf(x, a2, b2))
    if a2 == 0:
        return float(gamma_pdf(x, a1, b1))
    if _merge_rates(b1, b2):
        return float(gamma_pdf(x, a1 + a2, 0.5 * (b1 + b2)))
    out = _pf_eval(x, a1, b1, a2, b2, gamma_pdf)
    if out is None or out[1] > CANCEL_GUARD:
        return max(_conv_pdf_quad(x, a1, b1, a2, b2), 0.0)
    return max(out[0], 0.0)


def cdf_diff(x, shape1, rate1, shape2, rate2):
    """conv_cdf at shape1 minus conv_cdf at shape1 + 1 (always in [0, 1]).

    Defined for shape1 = shape2 = 0 as well, where it reduces to the
    survival function exp(-rate1 * x).
    """
    x, a1, b1, a2, b2 = _validate_conv(x, shape1, rate1, shape2, rate2, False)
    if a1 == 0 and a2 == 0:
        return math.exp(-b1 * x)
    v = conv_cdf(x, a1, b1, a2, b2) - conv_cdf(x, a1 + 1, b1, a2, b2)
    return min(max(v, 0.0), 1.0)
