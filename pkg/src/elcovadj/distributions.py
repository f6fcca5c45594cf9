"""Chi-square, noncentral chi-square and normal distribution functions.

Incomplete gamma ratios follow the usual split: power series below
``a + 1``, Lentz continued fraction above.
"""

from __future__ import annotations

import math

from .errors import DomainError

__all__ = [
    "gammainc_lower",
    "gammainc_upper",
    "chi2_cdf",
    "chi2_sf",
    "chi2_pdf",
    "chi2_quantile",
    "noncentral_chi2_cdf",
    "noncentral_chi2_sf",
    "normal_cdf",
    "normal_quantile",
]

_EPS = 1e-17
_TINY = 1e-300
_MAXIT = 10_000


def _series(a, x):
    # P(a, x) = x^a e^-x / Gamma(a+1) * sum_k x^k / ((a+1)...(a+k))
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAXIT):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _contfrac(a, x):
    # Q(a, x) by modified Lentz on the Legendre continued fraction
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAXIT):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def _check(a, x):
    if not a > 0:
        raise DomainError(f"shape must be positive, got {a}")
    if x < 0 or math.isnan(x):
        raise DomainError(f"argument must be nonnegative, got {x}")


def gammainc_lower(a: float, x: float) -> float:
    """Regularized lower incomplete gamma ``P(a, x)``."""
    _check(a, x)
    if x == 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < a + 1.0:
        return min(1.0, _series(a, x))
    return max(0.0, 1.0 - _contfrac(a, x))


def gammainc_upper(a: float, x: float) -> float:
    """Regularized upper incomplete gamma ``Q(a, x) = 1 - P(a, x)``."""
    _check(a, x)
    if x == 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < a + 1.0:
        return max(0.0, 1.0 - _series(a, x))
    return min(1.0, _contfrac(a, x))


def _check_df(df):
    if not df > 0:
        raise DomainError(f"degrees of freedom must be positive, got {df}")


def chi2_cdf(x: float, df: float) -> float:
    _check_df(df)
    if x <= 0:
        return 0.0
    return gammainc_lower(0.5 * df, 0.5 * x)


def chi2_sf(x: float, df: float) -> float:
    _check_df(df)
    if x <= 0:
        return 1.0
    return gammainc_upper(0.5 * df, 0.5 * x)


def chi2_pdf(x: float, df: float) -> float:
    _check_df(df)
    if x < 0:
        return 0.0
    k = 0.5 * df
    if x == 0:
        return 0.5 if df == 2 else (math.inf if df < 2 else 0.0)
    return math.exp((k - 1.0) * math.log(x) - 0.5 * x - k * math.log(2.0) - math.lgamma(k))


def _poisson_mixture(x, df, ncp, fn):
    if ncp < 0:
        raise DomainError(f"noncentrality must be nonnegative, got {ncp}")
    if ncp == 0:
        return fn(x, df)
    mu = 0.5 * ncp
    j0 = int(math.floor(mu))
    logw0 = -mu + j0 * math.log(mu) - math.lgamma(j0 + 1)
    w0 = math.exp(logw0)
    total = w0 * fn(x, df + 2 * j0)
    mass = w0
    # walk outward from the Poisson mode until the unvisited mass is negligible
    w_up, w_dn = w0, w0
    j_up, j_dn = j0, j0
    while 1.0 - mass > 1e-14:
        advanced = False
        w_next = w_up * mu / (j_up + 1)
        if w_next > 0:
            j_up += 1
            w_up = w_next
            total += w_up * fn(x, df + 2 * j_up)
            mass += w_up
            advanced = True
        if j_dn > 0:
            w_dn = w_dn * j_dn / mu
            j_dn -= 1
            total += w_dn * fn(x, df + 2 * j_dn)
            mass += w_dn
            advanced = True
        if not advanced or (w_up < 1e-18 * mass and (j_dn == 0 or w_dn < 1e-18 * mass)):
            break
    return min(1.0, max(0.0, total))


def noncentral_chi2_cdf(x: float, df: float, ncp: float) -> float:
    """Noncentral chi-square CDF as a Poisson mixture of central CDFs."""
    return _poisson_mixture(x, df, ncp, chi2_cdf)


def noncentral_chi2_sf(x: float, df: float, ncp: float) -> float:
    return _poisson_mixture(x, df, ncp, chi2_sf)


def normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def _normal_pdf(z):
    return math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def _invert(cdf, pdf, p, lo, hi, tol=1e-12):
    """Safeguarded Newton inside a shrinking bracket ``cdf(lo) <= p <= cdf(hi)``."""
    x = 0.5 * (lo + hi)
    for _ in range(200):
        f = cdf(x) - p
        if f > 0:
            hi = x
        else:
            lo = x
        dens = pdf(x)
        x_new = x - f / dens if dens > 0 else 0.5 * (lo + hi)
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= tol * max(1.0, abs(x)) or hi - lo <= tol * max(1.0, abs(x)):
            return x_new
        x = x_new
    return x


def normal_quantile(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise DomainError(f"probability must lie in (0, 1), got {p}")
    if p == 0.5:
        return 0.0
    return _invert(normal_cdf, _normal_pdf, p, -40.0, 40.0)


def chi2_quantile(p: float, df: float) -> float:
    _check_df(df)
    if not 0.0 <= p < 1.0:
        raise DomainError(f"probability must lie in [0, 1), got {p}")
    if p == 0.0:
        return 0.0
    hi = max(1.0, float(df))
    while chi2_cdf(hi, df) < p:
        hi *= 2.0
    return _invert(lambda t: chi2_cdf(t, df), lambda t: chi2_pdf(t, df), p, 0.0, hi)
