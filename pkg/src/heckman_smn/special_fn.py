"""Scalar special functions shared by the densities, cdfs and criteria.

Every public function accepts floats, numpy arrays or :class:`~heckman_smn.dual.Dual`
numbers. Derivatives are supplied by hand (``Phi' = phi``, ``d/dx I_x = integrand``)
rather than by differentiating the internal approximations.
"""
from __future__ import annotations

import math

import numba
import numpy as np
from scipy import special as _sp

from .dual import Dual, chain, is_dual, value

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
LOG_PI = math.log(math.pi)


class DomainError(ValueError):
    """Argument outside the mathematical domain of a function."""


# -- gamma family ---------------------------------------------------------------

def _lgamma_scalar(x):
    if x < 0.5:
        # reflection; x > 0 here so sin(pi x) > 0
        return math.log(math.pi / math.sin(math.pi * x)) - _lgamma_core(1.0 - x)
    return _lgamma_core(x)


def _lgamma_core(x):
    x = x - 1.0
    a = 0.99999999999980993
    a += 676.5203681218851 / (x + 1.0)
    a += -1259.1392167224028 / (x + 2.0)
    a += 771.32342877765313 / (x + 3.0)
    a += -176.61502916214059 / (x + 4.0)
    a += 12.507343278686905 / (x + 5.0)
    a += -0.13857109526572012 / (x + 6.0)
    a += 9.9843695780195716e-6 / (x + 7.0)
    a += 1.5056327351493116e-7 / (x + 8.0)
    t = x + 7.5
    return 0.91893853320467274178 + (x + 0.5) * math.log(t) - t + math.log(a)


def _digamma_scalar(x):
    acc = 0.0
    while x < 10.0:
        acc -= 1.0 / x
        x += 1.0
    inv = 1.0 / x
    z = inv * inv
    series = z * (
        1.0 / 12
        - z
        * (
            1.0 / 120
            - z * (1.0 / 252 - z * (1.0 / 240 - z * (1.0 / 132 - z * (691.0 / 32760 - z / 12.0))))
        )
    )
    return acc + math.log(x) - 0.5 * inv - series


_lgamma_core = numba.njit(cache=True)(_lgamma_core)
_lgamma_nb = numba.njit(cache=True)(_lgamma_scalar)
_digamma_nb = numba.njit(cache=True)(_digamma_scalar)


@numba.njit(cache=True)
def _stirling_tail(x):
    z = 1.0 / (x * x)
    return (1.0 / 12 - z * (1.0 / 360 - z * (1.0 / 1260 - z / 1680.0))) / x


@numba.njit(cache=True)
def _lbeta_nb(a, b):
    big, small = (a, b) if a >= b else (b, a)
    if big < 1e4:
        return _lgamma_nb(a) + _lgamma_nb(b) - _lgamma_nb(a + b)
    # lgamma(big) - lgamma(big + small) by Stirling differences; avoids
    # cancelling two O(big log big) terms
    s = big + small
    diff = -(big - 0.5) * math.log1p(small / big) + small - small * math.log(s)
    diff += _stirling_tail(big) - _stirling_tail(s)
    return _lgamma_nb(small) + diff


_lgamma_ufunc = numba.vectorize(["float64(float64)"], cache=True)(_lgamma_scalar)
_lbeta_ufunc = numba.vectorize(["float64(float64, float64)"], cache=True)(_lbeta_nb)
_digamma_ufunc = numba.vectorize(["float64(float64)"], cache=True)(_digamma_scalar)


def _check_positive(x, name):
    if np.any(~(np.asarray(value(x)) > 0)):
        raise DomainError(f"{name} must be > 0")


def log_gamma(x):
    """``log Gamma(x)`` for ``x > 0`` (Lanczos, g=7)."""
    _check_positive(x, "log_gamma argument")
    v = value(x)
    out = _lgamma_ufunc(v) if np.ndim(v) else _lgamma_nb(float(v))
    if isinstance(x, Dual):
        return chain(out, (x, digamma(v)))
    return out


def digamma(x):
    """Logarithmic derivative of the gamma function for ``x > 0``."""
    v = value(x)
    if np.ndim(v):
        return _digamma_ufunc(v)
    return _digamma_nb(float(v))


def log_beta(a, b):
    return log_gamma(a) + log_gamma(b) - log_gamma(a + b)


# -- normal cdf -----------------------------------------------------------------


def std_normal_cdf(x):
    """Standard normal cdf; saturates at 0 and 1."""
    v = value(x)
    out = _sp.ndtr(v)
    if isinstance(x, Dual):
        return chain(out, (x, np.exp(-0.5 * v * v - LOG_SQRT_2PI)))
    return out


def log_std_normal_cdf(x):
    """``log Phi(x)``; finite far into the lower tail."""
    v = value(x)
    out = _sp.log_ndtr(v)
    if isinstance(x, Dual):
        # d/dx log Phi = phi / Phi, formed in log space; nan at +-inf is left for the caller
        with np.errstate(invalid="ignore", over="ignore"):
            d = np.exp(-0.5 * v * v - LOG_SQRT_2PI - out)
        return chain(out, (x, d))
    return out


# -- incomplete beta --------------------------------------------------------------

_FPMIN = 1e-300
_CF_EPS = 1e-16
_CF_MAXIT = 1_000_000


@numba.njit(cache=True)
def _betacf(a, b, x):
    """Continued fraction for I_x(a, b) with forward derivatives in (a, b).

    Returns (h, dh/da, dh/db).
    """
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c, ca, cb = 1.0, 0.0, 0.0
    d = 1.0 - qab * x / qap
    da = -x / qap + qab * x / (qap * qap)
    db = -x / qap
    if abs(d) < _FPMIN:
        d, da, db = _FPMIN, 0.0, 0.0
    d = 1.0 / d
    da = -da * d * d
    db = -db * d * d
    h, ha, hb = d, da, db
    for m in range(1, _CF_MAXIT + 1):
        m2 = 2.0 * m
        # even step
        den1 = qam + m2
        den2 = a + m2
        aa = m * (b - m) * x / (den1 * den2)
        aaa = -aa * (1.0 / den1 + 1.0 / den2)
        aab = m * x / (den1 * den2)
        d, da, db = 1.0 + aa * d, aaa * d + aa * da, aab * d + aa * db
        if abs(d) < _FPMIN:
            d, da, db = _FPMIN, 0.0, 0.0
        c, ca, cb = 1.0 + aa / c, aaa / c - aa * ca / (c * c), aab / c - aa * cb / (c * c)
        if abs(c) < _FPMIN:
            c, ca, cb = _FPMIN, 0.0, 0.0
        d = 1.0 / d
        da = -da * d * d
        db = -db * d * d
        step = d * c
        stepa = da * c + d * ca
        stepb = db * c + d * cb
        h, ha, hb = h * step, ha * step + h * stepa, hb * step + h * stepb
        # odd step
        num = -(a + m) * (qab + m) * x
        numa = -x * ((qab + m) + (a + m))
        numb = -x * (a + m)
        den = (a + m2) * (qap + m2)
        dena = (qap + m2) + (a + m2)
        aa = num / den
        aaa = (numa - aa * dena) / den
        aab = numb / den
        d, da, db = 1.0 + aa * d, aaa * d + aa * da, aab * d + aa * db
        if abs(d) < _FPMIN:
            d, da, db = _FPMIN, 0.0, 0.0
        c, ca, cb = 1.0 + aa / c, aaa / c - aa * ca / (c * c), aab / c - aa * cb / (c * c)
        if abs(c) < _FPMIN:
            c, ca, cb = _FPMIN, 0.0, 0.0
        d = 1.0 / d
        da = -da * d * d
        db = -db * d * d
        step = d * c
        stepa = da * c + d * ca
        stepb = db * c + d * cb
        h, ha, hb = h * step, ha * step + h * stepa, hb * step + h * stepb
        tol = _CF_EPS * (1.0 + abs(ha / h) + abs(hb / h))
        if abs(step - 1.0) < _CF_EPS and abs(stepa) < tol and abs(stepb) < tol:
            break
    return h, ha, hb


@numba.njit(cache=True)
def _log_betainc_scalar(a, b, x, xc):
    """log I_x(a, b) and its partial derivatives in a and b.

    ``xc`` is ``1 - x`` supplied separately so callers can keep it accurate.
    """
    if x <= 0.0:
        return -np.inf, 0.0, 0.0
    if xc <= 0.0:
        return 0.0, 0.0, 0.0
    lb = _lbeta_nb(a, b)
    psab = _digamma_nb(a + b)
    lx = math.log(x)
    lxc = math.log(xc)
    front = a * lx + b * lxc - lb
    front_a = lx - _digamma_nb(a) + psab
    front_b = lxc - _digamma_nb(b) + psab
    if x < (a + 1.0) / (a + b + 2.0):
        h, ha, hb = _betacf(a, b, x)
        return front + math.log(h) - math.log(a), front_a + ha / h - 1.0 / a, front_b + hb / h
    # complement J = I_{1-x}(b, a); _betacf's first argument is b here
    h, hb, ha = _betacf(b, a, xc)
    log_j = front + math.log(h) - math.log(b)
    j = math.exp(log_j)
    ja = front_a + ha / h
    jb = front_b + hb / h - 1.0 / b
    scale = -j / (1.0 - j)
    return math.log1p(-j), scale * ja, scale * jb


@numba.njit(cache=True)
def _log_betainc_array(a, b, x, xc):
    n = x.size
    out = np.empty(n)
    oa = np.empty(n)
    ob = np.empty(n)
    for i in range(n):
        out[i], oa[i], ob[i] = _log_betainc_scalar(a[i], b[i], x[i], xc[i])
    return out, oa, ob


def _log_betainc_parts(a, b, x, xc=None):
    if xc is None:
        xc = 1.0 - np.asarray(x, dtype=float)
    a, b, x, xc = np.broadcast_arrays(*(np.asarray(t, dtype=float) for t in (a, b, x, xc)))
    shape = x.shape
    flat = [np.ascontiguousarray(t).ravel() for t in (a, b, x, xc)]
    out, oa, ob = _log_betainc_array(*flat)
    if shape == ():
        return float(out[0]), float(oa[0]), float(ob[0])
    return out.reshape(shape), oa.reshape(shape), ob.reshape(shape)


def _log_beta_integrand(a, b, x):
    # log of x^(a-1) (1-x)^(b-1) / B(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        return (a - 1.0) * np.log(x) + (b - 1.0) * np.log1p(-x) - _lbeta_ufunc(a, b)


def log_betainc(a, b, x):
    """``log I_x(a, b)``, the log regularized incomplete beta function."""
    av, bv, xv = value(a), value(b), value(x)
    _check_positive(av, "a")
    _check_positive(bv, "b")
    if np.any((np.asarray(xv) < 0) | (np.asarray(xv) > 1)):
        raise DomainError("x must lie in [0, 1]")
    out, da, db = _log_betainc_parts(av, bv, xv)
    if not is_dual(a, b, x):
        return out
    dx = np.exp(_log_beta_integrand(av, bv, xv) - out) if isinstance(x, Dual) else 0.0
    return chain(out, (a, da), (b, db), (x, dx))


def betainc(a, b, x):
    """Regularized incomplete beta ``I_x(a, b)``."""
    from .dual import exp

    return exp(log_betainc(a, b, x))


# -- Student's t cdf ----------------------------------------------------------


def _t_cdf_parts(x, nu):
    """log F_t(x; nu) with partials in x and nu (plain arrays)."""
    x = np.asarray(x, dtype=float)
    nu = np.asarray(nu, dtype=float)
    x, nu = np.broadcast_arrays(x, nu)
    x2 = x * x
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        z = nu / (nu + x2)
        zc = x2 / (nu + x2)
        # |x| = inf gives z = 0 exactly
        z = np.where(np.isinf(x), 0.0, z)
        zc = np.where(np.isinf(x), 1.0, zc)
        half = 0.5 * nu
        log_i, di_da, _ = _log_betainc_parts(half, 0.5, z, zc)
        log_tail = log_i - math.log(2.0)  # log of the smaller tail, 0.5 * I
        neg = x < 0
        tail = np.exp(log_tail)
        log_cdf = np.where(neg, log_tail, np.log1p(-tail))
        # pdf of the standard t
        log_pdf = (
            _lgamma_ufunc(np.asarray(half + 0.5)) - _lgamma_ufunc(np.asarray(half))
            - 0.5 * (LOG_PI + np.log(nu)) - (half + 0.5) * np.log1p(x2 / nu)
        )
        d_dx = np.exp(log_pdf - log_cdf)
        # d tail / d nu: 0.5 * [dI/da * 1/2 + dI/dz * dz/dnu]; dI/dz * dz/dnu is
        # rewritten so that it stays finite (-> 0) at x = 0
        lb = _lbeta_ufunc(half, 0.5)
        di_dz_dz = np.exp((half - 1.0) * np.log(z) - lb) * np.abs(x) * np.sqrt(nu + x2) / (nu + x2) ** 2
        di_dz_dz = np.where(np.isinf(x) | (z == 0.0), 0.0, di_dz_dz)
        dtail_dnu = 0.5 * (np.exp(log_i) * di_da * 0.5 + di_dz_dz)
        dlog_dnu = np.where(neg, dtail_dnu / tail, -dtail_dnu / np.exp(log_cdf))
        dlog_dnu = np.where(x == 0, 0.0, dlog_dnu)
        d_dx = np.where(np.isinf(x), 0.0, d_dx)
    if log_cdf.shape == ():
        return float(log_cdf), float(d_dx), float(dlog_dnu)
    return log_cdf, d_dx, dlog_dnu


def log_student_t_cdf(x, nu):
    """``log F(x)`` for the standard Student's t with ``nu`` degrees of freedom."""
    if np.any(~(np.asarray(value(nu)) > 0)):
        raise DomainError("degrees of freedom must be > 0")
    out, dx, dnu = _t_cdf_parts(value(x), value(nu))
    if not is_dual(x, nu):
        return out
    return chain(out, (x, dx), (nu, dnu))


def student_t_cdf(x, nu):
    """Cdf of the standard Student's t, via the regularized incomplete beta."""
    from .dual import exp

    return exp(log_student_t_cdf(x, nu))


# -- misc ---------------------------------------------------------------------


def log_sum_exp(a, b):
    """``log(exp(a) + exp(b))`` without overflow; ``-inf`` is the identity."""
    av, bv = value(a), value(b)
    out = np.logaddexp(av, bv)
    if not is_dual(a, b):
        return out
    with np.errstate(invalid="ignore"):
        wa = np.exp(av - out)
        wb = np.exp(bv - out)
    wa = np.where(np.isfinite(wa), wa, 0.0)
    wb = np.where(np.isfinite(wb), wb, 0.0)
    return chain(out, (a, wa), (b, wb))
