"""Heckman two-step estimator, used to start the sampler."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr

from .sel_model import SelectionData, SelParams, check_family
from .special_fn import LOG_SQRT_2PI

RHO_CLAMP = 0.95
SIGMA2_FLOOR = 1e-4
SEPARATION_NORM = 50.0
COND_LIMIT = 1e10


class TwoStepError(ValueError):
    pass


@dataclass(frozen=True)
class TwoStepEstimate:
    gamma_hat: np.ndarray
    beta_hat: np.ndarray
    sigma2_hat: float
    rho_hat: float
    corrected: bool = True
    probit_iterations: int = 0

    def to_params(self) -> SelParams:
        return SelParams(self.beta_hat.copy(), self.gamma_hat.copy(), self.sigma2_hat, self.rho_hat)


def inverse_mills(z):
    """phi(z) / Phi(z), evaluated in log space so large negative z stays accurate."""
    z = np.asarray(z, dtype=float)
    out = np.exp(-0.5 * z * z - LOG_SQRT_2PI - log_ndtr(z))
    return out if out.ndim else float(out)


def probit_loglik(gamma, c, w) -> float:
    eta = w @ gamma
    return float(np.sum(np.where(c == 1, log_ndtr(eta), log_ndtr(-eta))))


def probit_mle(c, w, tol: float = 1e-8, max_iter: int = 100, return_iterations: bool = False):
    """Newton-Raphson probit fit with step halving."""
    c = np.asarray(c).ravel()
    w = np.atleast_2d(np.asarray(w, dtype=float))
    if c.sum() == 0 or c.sum() == c.size:
        raise TwoStepError("probit needs both selected and unselected units")
    if np.linalg.matrix_rank(w) < w.shape[1]:
        raise TwoStepError("selection design is rank deficient")
    sign = np.where(c == 1, 1.0, -1.0)
    gamma = np.zeros(w.shape[1])
    ll = probit_loglik(gamma, c, w)
    it = 0
    for it in range(1, max_iter + 1):
        eta = w @ gamma
        lam = inverse_mills(sign * eta)  # phi/Phi at the signed index
        grad = w.T @ (sign * lam)
        if np.max(np.abs(grad)) < tol:
            break
        weight = lam * (lam + sign * eta)
        hess = (w * weight[:, None]).T @ w
        step = np.linalg.solve(hess, grad)
        t = 1.0
        for _ in range(60):
            cand = gamma + t * step
            ll_new = probit_loglik(cand, c, w)
            if ll_new >= ll:
                break
            t *= 0.5
        else:
            break
        gamma, ll = cand, ll_new
        if np.linalg.norm(gamma) > SEPARATION_NORM:
            raise TwoStepError("probit estimates diverge (separation); use a random initialization instead")
    return (gamma, it) if return_iterations else gamma


def heckman_two_step(data: SelectionData) -> TwoStepEstimate:
    """Probit for selection, then least squares with the inverse Mills ratio."""
    n1 = data.obs.size
    if n1 < data.p + 2:
        raise TwoStepError("too few selected units for the outcome regression")
    gamma, iters = probit_mle(data.c, data.w, return_iterations=True)
    idx = data.w_obs @ gamma
    lam = inverse_mills(idx)
    y = data.v_obs
    z = np.column_stack([data.x_obs, lam])
    if np.linalg.cond(z) > COND_LIMIT:
        # Mills column indistinguishable from the outcome design: plain OLS
        beta, *_ = np.linalg.lstsq(data.x_obs, y, rcond=None)
        e = y - data.x_obs @ beta
        s2 = max(float(e @ e) / n1, SIGMA2_FLOOR)
        return TwoStepEstimate(gamma, beta, s2, 0.0, corrected=False, probit_iterations=iters)
    coef, *_ = np.linalg.lstsq(z, y, rcond=None)
    beta, b_lam = coef[:-1], float(coef[-1])
    e = y - z @ coef
    delta = lam * (lam + idx)
    s2 = float(e @ e) / n1 + b_lam**2 * float(np.mean(delta))
    s2 = max(s2, SIGMA2_FLOOR)
    rho = float(np.clip(b_lam / np.sqrt(s2), -RHO_CLAMP, RHO_CLAMP))
    return TwoStepEstimate(gamma, beta, s2, rho, corrected=True, probit_iterations=iters)


def family_init(data: SelectionData, family: str, nu: float = 5.0, nu1: float = 0.25, nu2: float = 0.2) -> SelParams:
    """Two-step start for any family; tail parameters start at fixed values."""
    check_family(family)
    est = heckman_two_step(data)
    th = est.to_params()
    if family == "t":
        th.nu = nu
    elif family == "cn":
        th.nu1, th.nu2 = nu1, nu2
    return th
