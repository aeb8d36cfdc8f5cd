"""Scale mixtures of normals: densities, cdfs, conditional laws and sampling.

Only the scalar blocks needed by the selection likelihoods are covered: a
univariate marginal for the outcome error and the law of the selection error
given the outcome error.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import dual as D
from .special_fn import (
    LOG_PI,
    LOG_SQRT_2PI,
    DomainError,
    log_gamma,
    log_std_normal_cdf,
    log_sum_exp,
    std_normal_cdf,
)


# -- families -----------------------------------------------------------------


@dataclass(frozen=True)
class Normal:
    name = "normal"


@dataclass(frozen=True)
class StudentT:
    nu: float = 3.0
    name = "t"

    def __post_init__(self):
        if not self.nu > 2:
            raise DomainError("t degrees of freedom must be > 2")


@dataclass(frozen=True)
class ContaminatedNormal:
    nu1: float = 0.25
    nu2: float = 0.1
    name = "cn"

    def __post_init__(self):
        if not (0 < self.nu1 < 1 and 0 < self.nu2 < 1):
            raise DomainError("contaminated normal needs nu1 and nu2 in (0, 1)")


@dataclass(frozen=True)
class Slash:
    """Generation-only: U ~ Beta(nu, 1)."""

    nu: float = 1.43
    name = "slash"

    def __post_init__(self):
        if not self.nu > 0:
            raise DomainError("slash parameter must be > 0")


ErrorFamily = Union[Normal, StudentT, ContaminatedNormal, Slash]


@dataclass(frozen=True)
class SelectionScale:
    """Scale of (eps1, eps2): [[sigma2, rho*sigma], [rho*sigma, 1]]."""

    sigma2: float
    rho: float

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise DomainError("sigma2 must be > 0")
        if not -1 < self.rho < 1:
            raise DomainError("rho must lie in (-1, 1)")

    def cov(self) -> np.ndarray:
        s = math.sqrt(self.sigma2)
        return np.array([[self.sigma2, self.rho * s], [self.rho * s, 1.0]])


@dataclass
class ConditionalLaw:
    """Law of the selection error given the outcome error.

    ``df`` is set for the t case; ``weight`` and ``nu2`` for the CN case, where
    the law is ``weight * N(location, scale2/nu2) + (1-weight) * N(location, scale2)``.
    """

    location: object
    scale2: object
    df: Optional[object] = None
    weight: Optional[object] = None
    nu2: Optional[object] = None


# -- densities ----------------------------------------------------------------


def _positive(x, name):
    if np.any(~(np.asarray(D.value(x)) > 0)):
        raise DomainError(f"{name} must be > 0")


def _unit_open(x, name, upper_closed=False):
    v = np.asarray(D.value(x))
    ok = (v > 0) & ((v <= 1) if upper_closed else (v < 1))
    if not np.all(ok):
        raise DomainError(f"{name} outside its interval")


def normal_logpdf(x, mu, sigma2):
    _positive(sigma2, "sigma2")
    r = x - mu
    return -LOG_SQRT_2PI - 0.5 * D.log(sigma2) - 0.5 * (r * r) / sigma2


def t_logpdf(x, mu, sigma2, nu):
    """Location-scale Student's t log density."""
    _positive(sigma2, "sigma2")
    _positive(nu, "nu")
    r = x - mu
    delta = (r * r) / sigma2
    half = 0.5 * nu
    return (
        log_gamma(half + 0.5)
        - log_gamma(half)
        - 0.5 * (LOG_PI + D.log(nu) + D.log(sigma2))
        - (half + 0.5) * D.log1p(delta / nu)
    )


def log_mix(log_w, log_1mw, diff):
    """``log(w * exp(diff) + (1 - w))`` given ``log w`` and ``log(1 - w)``.

    Exactly zero when ``diff == 0``, so a degenerate mixture reproduces its
    base density bit for bit.
    """
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        near = D.log1p(D.exp(log_w) * D.expm1(diff))
        far = log_sum_exp(log_w + diff, log_1mw)
    return D.where(np.abs(D.value(diff)) < 1.0, near, far)


def _cn_excess(x, mu, sigma2, nu2):
    # log phi(x | mu, sigma2/nu2) - log phi(x | mu, sigma2); zero when nu2 == 1
    r = x - mu
    return 0.5 * D.log(nu2) + 0.5 * (r * r) / sigma2 * (1.0 - nu2)


def cn_logpdf(x, mu, sigma2, nu1, nu2):
    """log[nu1 phi(x|mu, sigma2/nu2) + (1-nu1) phi(x|mu, sigma2)]."""
    _positive(sigma2, "sigma2")
    _unit_open(nu1, "nu1")
    _unit_open(nu2, "nu2", upper_closed=True)
    base = normal_logpdf(x, mu, sigma2)
    return base + log_mix(D.log(nu1), D.log1p(-nu1), _cn_excess(x, mu, sigma2, nu2))


def cn_cdf(b, mu, sigma2, nu1, nu2):
    return D.exp(cn_logcdf(b, mu, sigma2, nu1, nu2))


def cn_logcdf(b, mu, sigma2, nu1, nu2):
    """log[nu1 Phi(b|mu, sigma2/nu2) + (1-nu1) Phi(b|mu, sigma2)]."""
    _positive(sigma2, "sigma2")
    _unit_open(nu1, "nu1")
    _unit_open(nu2, "nu2", upper_closed=True)
    z = (b - mu) / D.sqrt(sigma2)
    base = log_std_normal_cdf(z)
    diff = log_std_normal_cdf(z * D.sqrt(nu2)) - base
    return base + log_mix(D.log(nu1), D.log1p(-nu1), diff)


def cn_posterior_weight(x, mu, sigma2, nu1, nu2):
    """P(U = nu2 | X = x): posterior probability of the inflated component."""
    _positive(sigma2, "sigma2")
    _unit_open(nu1, "nu1")
    _unit_open(nu2, "nu2", upper_closed=True)
    logit = D.log(nu1) - D.log1p(-nu1) + _cn_excess(x, mu, sigma2, nu2)
    return D.expit(logit)


# -- conditional laws ---------------------------------------------------------


def _conditional_location(v1, x_mean, w_mean, scale):
    sigma = math.sqrt(scale.sigma2)
    return w_mean + (scale.rho / sigma) * (v1 - x_mean)


def t_conditional(v1, x_mean, w_mean, scale: SelectionScale, nu) -> ConditionalLaw:
    _positive(nu, "nu")
    delta = (v1 - x_mean) ** 2 / scale.sigma2
    loc = _conditional_location(v1, x_mean, w_mean, scale)
    s2 = (nu + delta) / (nu + 1.0) * (1.0 - scale.rho**2)
    return ConditionalLaw(location=loc, scale2=s2, df=nu + 1.0)


def cn_conditional(v1, x_mean, w_mean, scale: SelectionScale, nu1, nu2) -> ConditionalLaw:
    loc = _conditional_location(v1, x_mean, w_mean, scale)
    w = cn_posterior_weight(v1, x_mean, scale.sigma2, nu1, nu2)
    return ConditionalLaw(location=loc, scale2=1.0 - scale.rho**2, weight=w, nu2=nu2)


def conditional_logpdf(y2, law: ConditionalLaw):
    """Log density of the selection error at ``y2`` under a conditional law."""
    if law.df is not None:
        return t_logpdf(y2, law.location, law.scale2, law.df)
    if law.weight is not None:
        w = law.weight
        return log_sum_exp(
            D.log(w) + normal_logpdf(y2, law.location, law.scale2 / law.nu2),
            D.log1p(-w) + normal_logpdf(y2, law.location, law.scale2),
        )
    return normal_logpdf(y2, law.location, law.scale2)


def bivariate_logpdf(e1, e2, family: ErrorFamily, scale: SelectionScale):
    """Joint log density of (eps1, eps2) for the fitted families (brute-force checks)."""
    cov = scale.cov()
    prec = np.linalg.inv(cov)
    e = np.stack(np.broadcast_arrays(np.asarray(e1, float), np.asarray(e2, float)), axis=-1)
    delta = np.einsum("...i,ij,...j->...", e, prec, e)
    logdet = math.log(np.linalg.det(cov))
    if isinstance(family, Normal):
        return -math.log(2 * math.pi) - 0.5 * logdet - 0.5 * delta
    if isinstance(family, StudentT):
        nu = family.nu
        return (
            log_gamma((nu + 2) / 2) - log_gamma(nu / 2) - math.log(nu * math.pi)
            - 0.5 * logdet - (nu + 2) / 2 * np.log1p(delta / nu)
        )
    if isinstance(family, ContaminatedNormal):
        a = math.log(family.nu1) + math.log(family.nu2) - math.log(2 * math.pi) - 0.5 * logdet - 0.5 * family.nu2 * delta
        b = math.log1p(-family.nu1) - math.log(2 * math.pi) - 0.5 * logdet - 0.5 * delta
        return np.logaddexp(a, b)
    raise DomainError(f"no joint density for {family!r}")


# -- sampling -------------------------------------------------------------------


def sample_mixing(family: ErrorFamily, rng: np.random.Generator, size=None):
    """Draw the mixing variable U of X = mu + U^(-1/2) Z."""
    if isinstance(family, Normal):
        return np.ones(size) if size is not None else 1.0
    if isinstance(family, StudentT):
        return rng.gamma(family.nu / 2.0, 2.0 / family.nu, size=size)
    if isinstance(family, ContaminatedNormal):
        hit = rng.random(size) < family.nu1
        return np.where(hit, family.nu2, 1.0)
    if isinstance(family, Slash):
        return rng.beta(family.nu, 1.0, size=size)
    raise DomainError(f"unknown family {family!r}")


def sample_bivariate_error(family: ErrorFamily, scale: SelectionScale, rng: np.random.Generator, size=None):
    """Draw (eps1, eps2) = U^(-1/2) Z with Z ~ N2(0, Sigma).

    Returns ``(e1, e2)``; with ``size`` set, also the mixing draws as a third
    element so callers can see which units were contaminated.
    """
    sigma = math.sqrt(scale.sigma2)
    n = 1 if size is None else size
    z = rng.standard_normal((2, n))
    z1 = sigma * z[0]
    z2 = scale.rho * z[0] + math.sqrt(1.0 - scale.rho**2) * z[1]
    u = np.asarray(sample_mixing(family, rng, n), dtype=float)
    k = 1.0 / np.sqrt(u)
    e1, e2 = k * z1, k * z2
    if size is None:
        return float(e1[0]), float(e2[0])
    return e1, e2, u


__all__ = [
    "Normal",
    "StudentT",
    "ContaminatedNormal",
    "Slash",
    "ErrorFamily",
    "SelectionScale",
    "ConditionalLaw",
    "normal_logpdf",
    "t_logpdf",
    "cn_logpdf",
    "cn_cdf",
    "cn_logcdf",
    "cn_posterior_weight",
    "t_conditional",
    "cn_conditional",
    "conditional_logpdf",
    "bivariate_logpdf",
    "sample_mixing",
    "sample_bivariate_error",
    "log_mix",
    "std_normal_cdf",
]
