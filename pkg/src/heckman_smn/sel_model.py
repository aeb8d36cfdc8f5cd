"""Heckman selection likelihoods (normal, Student's t, contaminated normal),
priors, and the unconstrained log posterior the sampler targets.

All functions are written against the :mod:`heckman_smn.dual` namespace so the
same code path evaluates plain values and forward-mode derivatives.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from . import dual as D
from .smn_dist import _cn_excess, cn_logpdf, log_mix, normal_logpdf, t_logpdf
from .special_fn import DomainError, log_beta, log_std_normal_cdf, log_student_t_cdf, student_t_cdf

FAMILIES = ("normal", "t", "cn")
MODEL_LABELS = {"normal": "SLn", "t": "SLt", "cn": "SLcn"}
NU_LOWER = 2.0


def check_family(family: str) -> str:
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")
    return family


# -- data -----------------------------------------------------------------------


@dataclass(frozen=True)
class SelectionData:
    """Observed sample: outcome with missing entries (NaN), selection flags and designs."""

    v1: np.ndarray
    c: np.ndarray
    x: np.ndarray
    w: np.ndarray
    x_names: Optional[Sequence[str]] = None
    w_names: Optional[Sequence[str]] = None

    def __post_init__(self):
        v1 = np.asarray(self.v1, dtype=float).ravel()
        c = np.asarray(self.c).ravel()
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        w = np.atleast_2d(np.asarray(self.w, dtype=float))
        n = v1.size
        if c.size != n or x.shape[0] != n or w.shape[0] != n:
            raise ValueError("v1, c, x and w must have the same number of rows")
        if not np.all((c == 0) | (c == 1)):
            raise ValueError("selection indicators must be 0/1")
        c = c.astype(np.int8)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(w))):
            raise ValueError("design matrices must be finite")
        observed = ~np.isnan(v1)
        if np.any(observed != (c == 1)):
            raise ValueError("outcome must be present exactly where c == 1")
        if np.any(np.isinf(v1[observed])):
            raise ValueError("observed outcomes must be finite")
        if c.sum() == 0 or c.sum() == n:
            raise ValueError("need at least one selected and one unselected unit")
        if n < x.shape[1] + w.shape[1] + 2:
            raise ValueError("too few units for the number of coefficients")
        for name, val in (("v1", v1), ("c", c), ("x", x), ("w", w)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        if x.shape[1] == w.shape[1] and np.array_equal(x, w):
            warnings.warn("outcome and selection designs are identical; no exclusion restriction", stacklevel=3)

    @classmethod
    def from_arrays(cls, y, x, w, c=None, **kw) -> "SelectionData":
        """Build from an outcome with NaN for unobserved units; ``c`` inferred if omitted."""
        y = np.asarray(y, dtype=float)
        if c is None:
            c = (~np.isnan(y)).astype(int)
        return cls(y, c, x, w, **kw)

    @property
    def n(self) -> int:
        return self.v1.size

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def q(self) -> int:
        return self.w.shape[1]

    @cached_property
    def obs(self) -> np.ndarray:
        return np.flatnonzero(self.c == 1)

    @cached_property
    def cens(self) -> np.ndarray:
        return np.flatnonzero(self.c == 0)

    @cached_property
    def v_obs(self) -> np.ndarray:
        return self.v1[self.obs]

    @cached_property
    def x_obs(self) -> np.ndarray:
        return np.ascontiguousarray(self.x[self.obs])

    @cached_property
    def w_obs(self) -> np.ndarray:
        return np.ascontiguousarray(self.w[self.obs])

    @cached_property
    def w_cens(self) -> np.ndarray:
        return np.ascontiguousarray(self.w[self.cens])


# -- parameters -----------------------------------------------------------------


@dataclass
class SelParams:
    """Constrained parameters. ``nu`` for the t model, ``nu1``/``nu2`` for CN."""

    beta: object
    gamma: object
    sigma2: object
    rho: object
    nu: Optional[object] = None
    nu1: Optional[object] = None
    nu2: Optional[object] = None
    # 1 - rho^2 carried separately: tanh rounds to +-1 long before 1 - rho^2 underflows
    one_minus_rho2: Optional[object] = field(default=None, repr=False)

    def __post_init__(self):
        if self.one_minus_rho2 is None:
            self.one_minus_rho2 = (1.0 - self.rho) * (1.0 + self.rho)

    @property
    def family(self) -> str:
        if self.nu is not None:
            return "t"
        if self.nu1 is not None or self.nu2 is not None:
            return "cn"
        return "normal"

    def validate(self) -> "SelParams":
        v = lambda a: np.asarray(D.value(a), dtype=float)  # noqa: E731
        if not v(self.sigma2) > 0:
            raise DomainError("sigma2 must be > 0")
        if not (-1 < v(self.rho) < 1):
            raise DomainError("rho must lie in (-1, 1)")
        if self.nu is not None and not v(self.nu) > NU_LOWER:
            raise DomainError("nu must be > 2")
        for name in ("nu1", "nu2"):
            val = getattr(self, name)
            if val is not None and not (0 < v(val) < 1):
                raise DomainError(f"{name} must lie in (0, 1)")
        if (self.nu1 is None) != (self.nu2 is None):
            raise DomainError("contaminated normal needs both nu1 and nu2")
        return self

    def as_vector(self) -> np.ndarray:
        parts = [self.beta, self.gamma, [self.sigma2, self.rho]]
        parts += [[self.nu]] if self.nu is not None else []
        parts += [[self.nu1, self.nu2]] if self.nu1 is not None else []
        return np.concatenate([np.atleast_1d(np.asarray(D.value(p), dtype=float)) for p in parts])

    @classmethod
    def from_vector(cls, vec, family: str, p: int, q: int) -> "SelParams":
        vec = np.asarray(vec, dtype=float)
        kw = dict(beta=vec[:p], gamma=vec[p : p + q], sigma2=float(vec[p + q]), rho=float(vec[p + q + 1]))
        if family == "t":
            kw["nu"] = float(vec[p + q + 2])
        elif family == "cn":
            kw["nu1"], kw["nu2"] = float(vec[p + q + 2]), float(vec[p + q + 3])
        return cls(**kw)


def param_names(family: str, p: int, q: int) -> list:
    names = [f"beta{j + 1}" for j in range(p)] + [f"gamma{k + 1}" for k in range(q)] + ["sigma2", "rho"]
    if family == "t":
        names.append("nu")
    elif family == "cn":
        names += ["nu1", "nu2"]
    return names


def n_extra(family: str) -> int:
    return {"normal": 0, "t": 1, "cn": 2}[check_family(family)]


def dim(family: str, p: int, q: int) -> int:
    return p + q + 2 + n_extra(family)


# -- priors -------------------------------------------------------------------


@dataclass(frozen=True)
class PriorSpec:
    """Independent weakly informative priors."""

    beta_sd: float = 10.0
    gamma_sd: float = 10.0
    sigma2_cauchy_scale: float = 4.0
    nu_t_prior: tuple = (0.0, 5.0, 4.0)  # location, scale, df; truncated to nu > 2
    nu1_beta: tuple = (2.0, 6.0)
    nu2_beta: tuple = (2.0, 12.0)

    def __post_init__(self):
        scales = [self.beta_sd, self.gamma_sd, self.sigma2_cauchy_scale, self.nu_t_prior[1], self.nu_t_prior[2]]
        scales += list(self.nu1_beta) + list(self.nu2_beta)
        if min(scales) <= 0:
            raise ValueError("prior scales must be > 0")


def _beta_logpdf(x, a, b, log_x=None, log_1mx=None):
    log_x = D.log(x) if log_x is None else log_x
    log_1mx = D.log1p(-x) if log_1mx is None else log_1mx
    return (a - 1.0) * log_x + (b - 1.0) * log_1mx - log_beta(a, b)


def half_cauchy_logpdf(x, scale):
    return math.log(2.0 / (math.pi * scale)) - D.log1p((x / scale) * (x / scale))


def truncated_t_logpdf(x, loc, scale, df, lower):
    # normalizing mass above the truncation point is a constant
    mass = 1.0 - float(student_t_cdf((lower - loc) / scale, df))
    return t_logpdf(x, loc, scale * scale, df) - math.log(mass)


def log_prior(params: SelParams, spec: PriorSpec = PriorSpec(), *, _logs=None) -> object:
    """Sum of independent log prior densities (proper, fully normalized)."""
    if _logs is None:
        params.validate()
    lp = D.dsum(normal_logpdf(params.beta, 0.0, spec.beta_sd**2))
    lp = lp + D.dsum(normal_logpdf(params.gamma, 0.0, spec.gamma_sd**2))
    lp = lp + math.log(0.5)
    lp = lp + half_cauchy_logpdf(params.sigma2, spec.sigma2_cauchy_scale)
    if params.nu is not None:
        loc, scale, df = spec.nu_t_prior
        lp = lp + truncated_t_logpdf(params.nu, loc, scale, df, NU_LOWER)
    if params.nu1 is not None:
        l1 = _logs or {}
        lp = lp + _beta_logpdf(params.nu1, *spec.nu1_beta, l1.get("log_nu1"), l1.get("log_1m_nu1"))
        lp = lp + _beta_logpdf(params.nu2, *spec.nu2_beta, l1.get("log_nu2"), l1.get("log_1m_nu2"))
    return lp


# -- likelihoods ----------------------------------------------------------------


def _selection_index(theta: SelParams, data: SelectionData):
    xb = data.x_obs @ theta.beta
    resid = data.v_obs - xb
    mu = data.w_obs @ theta.gamma + (theta.rho / D.sqrt(theta.sigma2)) * resid
    return xb, resid, mu


def _parts_sln(theta, data):
    xb, _, mu = _selection_index(theta, data)
    obs = normal_logpdf(data.v_obs, xb, theta.sigma2) + log_std_normal_cdf(mu / D.sqrt(theta.one_minus_rho2))
    cens = log_std_normal_cdf(-(data.w_cens @ theta.gamma))
    return obs, cens


def _parts_slt(theta, data):
    nu = theta.nu
    xb, resid, mu = _selection_index(theta, data)
    delta = (resid * resid) / theta.sigma2
    scale2 = (nu + delta) / (nu + 1.0) * theta.one_minus_rho2
    obs = t_logpdf(data.v_obs, xb, theta.sigma2, nu) + log_student_t_cdf(mu / D.sqrt(scale2), nu + 1.0)
    cens = log_student_t_cdf(-(data.w_cens @ theta.gamma), nu)
    return obs, cens


def _parts_slcn(theta, data, logs=None):
    logs = logs or {}
    nu1, nu2 = theta.nu1, theta.nu2
    log_nu1 = logs.get("log_nu1", None)
    log_nu1 = D.log(nu1) if log_nu1 is None else log_nu1
    log_1m_nu1 = logs.get("log_1m_nu1", None)
    log_1m_nu1 = D.log1p(-nu1) if log_1m_nu1 is None else log_1m_nu1
    sqrt_nu2 = D.sqrt(nu2)

    xb, _, mu = _selection_index(theta, data)
    excess = _cn_excess(data.v_obs, xb, theta.sigma2, nu2)
    mix = log_mix(log_nu1, log_1m_nu1, excess)
    log_f = normal_logpdf(data.v_obs, xb, theta.sigma2) + mix
    # posterior weight of the inflated component given the outcome
    log_omega = log_nu1 + excess - mix
    log_1m_omega = log_1m_nu1 - mix
    z = mu / D.sqrt(theta.one_minus_rho2)
    base = log_std_normal_cdf(z)
    obs = log_f + base + log_mix(log_omega, log_1m_omega, log_std_normal_cdf(z * sqrt_nu2) - base)

    zc = -(data.w_cens @ theta.gamma)
    base_c = log_std_normal_cdf(zc)
    cens = base_c + log_mix(log_nu1, log_1m_nu1, log_std_normal_cdf(zc * sqrt_nu2) - base_c)
    return obs, cens


def _parts(theta: SelParams, data: SelectionData, family: str, logs=None):
    if family == "normal":
        return _parts_sln(theta, data)
    if family == "t":
        return _parts_slt(theta, data)
    if family == "cn":
        return _parts_slcn(theta, data, logs)
    raise ValueError(f"unknown family {family!r}")


def _check_dims(params: SelParams, data: SelectionData):
    if np.size(D.value(params.beta)) != data.p or np.size(D.value(params.gamma)) != data.q:
        raise ValueError("parameter dimensions do not match the design matrices")


def loglik(params: SelParams, data: SelectionData, family: Optional[str] = None):
    family = check_family(family or params.family)
    _check_dims(params, data)
    obs, cens = _parts(params, data, family)
    return D.dsum(obs) + D.dsum(cens)


def loglik_sln(params: SelParams, data: SelectionData):
    return loglik(params, data, "normal")


def loglik_slt(params: SelParams, data: SelectionData):
    if params.nu is None:
        raise DomainError("SLt likelihood needs nu")
    return loglik(params, data, "t")


def loglik_slcn(params: SelParams, data: SelectionData):
    if params.nu1 is None or params.nu2 is None:
        raise DomainError("SLcn likelihood needs nu1 and nu2")
    return loglik(params, data, "cn")


def pointwise_loglik(params: SelParams, data: SelectionData, family: Optional[str] = None):
    """Per-unit log-likelihood contributions (length n)."""
    family = check_family(family or params.family)
    _check_dims(params, data)
    obs, cens = _parts(params, data, family)
    return D.scatter(data.n, [(data.obs, obs), (data.cens, cens)])


# -- unconstrained parameterization -----------------------------------------------


def to_unconstrained(params: SelParams) -> np.ndarray:
    params.validate()
    parts = [np.atleast_1d(np.asarray(params.beta, float)), np.atleast_1d(np.asarray(params.gamma, float))]
    parts.append([math.log(params.sigma2), math.atanh(params.rho)])
    if params.nu is not None:
        parts.append([math.log(params.nu - NU_LOWER)])
    if params.nu1 is not None:
        parts.append([_logit(params.nu1), _logit(params.nu2)])
    return np.concatenate([np.asarray(p, dtype=float) for p in parts])


def _logit(p):
    return math.log(p) - math.log1p(-p)


def _split(u, family: str, p: int, q: int):
    k = p + q
    return u[:p], u[p:k], u[k], u[k + 1], u[k + 2 :]


def from_unconstrained(u, family: str, p: int, q: int) -> SelParams:
    """Map any real vector onto the parameter domain (works on duals too)."""
    check_family(family)
    if len(u) != dim(family, p, q):
        raise ValueError(f"expected a vector of length {dim(family, p, q)}")
    beta, gamma, u_s, u_r, extra = _split(u, family, p, q)
    kw = dict(
        beta=beta,
        gamma=gamma,
        sigma2=D.exp(u_s),
        rho=D.tanh(u_r),
        one_minus_rho2=D.exp(D.log_sech2(u_r)),
    )
    if family == "t":
        kw["nu"] = NU_LOWER + D.exp(extra[0])
    elif family == "cn":
        kw["nu1"] = D.expit(extra[0])
        kw["nu2"] = D.expit(extra[1])
    return SelParams(**kw)


def log_jacobian(u, family: str, p: int, q: int):
    """log |d theta / d u| of :func:`from_unconstrained`."""
    _, _, u_s, u_r, extra = _split(u, family, p, q)
    out = u_s + D.log_sech2(u_r)
    if family == "t":
        out = out + extra[0]
    elif family == "cn":
        for e in (extra[0], extra[1]):
            out = out + D.log_expit(e) + D.log_expit(-e)
    return out


def log_posterior_unconstrained(u, data: SelectionData, spec: PriorSpec = PriorSpec(), family: str = "normal"):
    """Log posterior density of the unconstrained vector (up to the evidence)."""
    theta = from_unconstrained(u, family, data.p, data.q)
    logs = None
    if family == "cn":
        e1, e2 = u[-2], u[-1]
        logs = {
            "log_nu1": D.log_expit(e1),
            "log_1m_nu1": D.log_expit(-e1),
            "log_nu2": D.log_expit(e2),
            "log_1m_nu2": D.log_expit(-e2),
        }
    obs, cens = _parts(theta, data, family, logs)
    lp = D.dsum(obs) + D.dsum(cens)
    lp = lp + log_prior(theta, spec, _logs=logs or {})
    return lp + log_jacobian(u, family, data.p, data.q)


@dataclass
class SelectionModel:
    """Bundle of data, family and prior: the target handed to the sampler."""

    data: SelectionData
    family: str = "normal"
    prior: PriorSpec = field(default_factory=PriorSpec)

    def __post_init__(self):
        check_family(self.family)

    @property
    def dim(self) -> int:
        return dim(self.family, self.data.p, self.data.q)

    @property
    def names(self) -> list:
        return param_names(self.family, self.data.p, self.data.q)

    @property
    def label(self) -> str:
        return MODEL_LABELS[self.family]

    def log_density(self, u):
        return log_posterior_unconstrained(u, self.data, self.prior, self.family)

    def log_density_and_grad(self, u):
        g = D.Dual.seed(u)
        out = self.log_density(g)
        return float(out.val), np.array(out.tan, dtype=float)

    def constrain(self, u) -> SelParams:
        return from_unconstrained(np.asarray(u, dtype=float), self.family, self.data.p, self.data.q)

    def unconstrain(self, params: SelParams) -> np.ndarray:
        return to_unconstrained(params)

    def pointwise(self, params: SelParams) -> np.ndarray:
        return pointwise_loglik(params, self.data, self.family)
