"""Posterior summaries, convergence diagnostics, predictive criteria and
outlier probabilities for contaminated-normal fits."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Dict, List, NamedTuple, Optional

import numpy as np
from scipy.special import logsumexp, ndtri

from .sel_model import MODEL_LABELS, SelectionData
from .smn_dist import cn_logcdf, cn_posterior_weight
from .special_fn import log_std_normal_cdf

PARETO_K_WARN = 0.7
RHAT_WARN = 1.01


# -- intervals and diagnostics -------------------------------------------------------


def hpd_interval(draws, mass: float = 0.95):
    """Shortest window holding ``ceil(mass * M)`` consecutive order statistics.

    Ties go to the lowest starting index.
    """
    x = np.sort(np.asarray(draws, dtype=float).ravel())
    if not 0 < mass < 1:
        raise ValueError("mass must lie in (0, 1)")
    if x.size < 20:
        raise ValueError("need at least 20 draws for an HPD interval")
    k = int(math.ceil(mass * x.size - 1e-9))
    widths = x[k - 1 :] - x[: x.size - k + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + k - 1])


def _as_chains(chain_draws) -> np.ndarray:
    a = np.asarray(chain_draws, dtype=float)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ValueError("expected a chains x draws array")
    return a


def _split(a: np.ndarray) -> np.ndarray:
    half = a.shape[1] // 2
    if half < 50:
        raise ValueError("need at least 2 x 50 draws per chain for split diagnostics")
    return np.concatenate([a[:, :half], a[:, a.shape[1] - half :]], axis=0)


def split_rhat(chain_draws) -> float:
    """Split-chain potential scale reduction; NaN when every draw is identical."""
    s = _split(_as_chains(chain_draws))
    n = s.shape[1]
    w = float(np.mean(np.var(s, axis=1, ddof=1)))
    b = n * float(np.var(np.mean(s, axis=1), ddof=1))
    if w == 0:
        return float("nan")
    var_plus = (n - 1) / n * w + b / n
    return float(math.sqrt(var_plus / w))


def _autocov(x: np.ndarray) -> np.ndarray:
    # biased autocovariance of each row via FFT
    n = x.shape[1]
    xc = x - x.mean(axis=1, keepdims=True)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size, axis=1)
    return np.fft.irfft(f * np.conj(f), size, axis=1)[:, :n] / n


def _ess(s: np.ndarray) -> float:
    m, n = s.shape
    acov = _autocov(s)
    chain_mean = s.mean(axis=1)
    mean_var = float(np.mean(acov[:, 0])) * n / (n - 1)
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += float(np.var(chain_mean, ddof=1))
    if not var_plus > 0:
        return float("nan")
    rho = np.zeros(n)
    rho[0] = 1.0
    even, odd = 1.0, 1.0 - (mean_var - float(np.mean(acov[:, 1]))) / var_plus
    rho[1] = odd
    t = 1
    # initial positive sequence over paired lags
    while t < n - 3 and even + odd > 0:
        even = 1.0 - (mean_var - float(np.mean(acov[:, t + 1]))) / var_plus
        odd = 1.0 - (mean_var - float(np.mean(acov[:, t + 2]))) / var_plus
        if even + odd >= 0:
            rho[t + 1], rho[t + 2] = even, odd
        t += 2
    max_t = t
    if even > 0:
        rho[max_t + 1] = even
    # initial monotone sequence
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = rho[t + 2] = 0.5 * (rho[t - 1] + rho[t])
        t += 2
    total = m * n
    tau = -1.0 + 2.0 * float(np.sum(rho[: max_t + 1])) + float(np.sum(rho[max_t + 1 : max_t + 2]))
    tau = max(tau, 1.0 / math.log10(total))
    return total / tau


def rank_normalize(a: np.ndarray) -> np.ndarray:
    """Normal scores of pooled ranks (average ranks for ties)."""
    from scipy.stats import rankdata

    r = rankdata(a, method="average").reshape(a.shape)
    return ndtri((r - 0.375) / (a.size + 0.25))


def bulk_ess(chain_draws) -> float:
    """Rank-normalized split-chain effective sample size."""
    s = _split(_as_chains(chain_draws))
    if np.all(s == s.flat[0]):
        return float("nan")
    return _ess(rank_normalize(s))


# -- predictive criteria ---------------------------------------------------------------


class WaicResult(NamedTuple):
    waic: float
    p_waic: float
    lppd: float


class LooResult(NamedTuple):
    looic: float
    elpd_loo: float
    pareto_k: np.ndarray


def _check_pointwise(ll, min_draws=2) -> np.ndarray:
    ll = np.asarray(ll, dtype=float)
    if ll.ndim == 1:
        ll = ll[:, None]
    if ll.ndim != 2:
        raise ValueError("pointwise log-likelihood must be draws x units")
    if not np.all(np.isfinite(ll)):
        raise ValueError("pointwise log-likelihood has non-finite entries")
    if ll.shape[0] < min_draws:
        raise ValueError(f"need at least {min_draws} draws")
    return ll


def lppd_pointwise(ll) -> np.ndarray:
    ll = _check_pointwise(ll, 1)
    return logsumexp(ll, axis=0) - math.log(ll.shape[0])


def waic(pointwise) -> WaicResult:
    """``-2 (lppd - p_waic)`` with ``p_waic`` the summed per-unit sample variance."""
    ll = _check_pointwise(pointwise)
    lppd = float(np.sum(lppd_pointwise(ll)))
    p = float(np.sum(np.var(ll, axis=0, ddof=1)))
    return WaicResult(-2.0 * (lppd - p), p, lppd)


def _gpd_pwm(x: np.ndarray):
    """Probability-weighted-moment fit of a generalized Pareto with zero location.

    Returns ``(shape, scale)`` with positive shape meaning a heavy tail.
    """
    x = np.sort(x)
    n = x.size
    pp = (np.arange(1, n + 1) - 0.35) / n
    a0 = float(np.mean(x))
    a1 = float(np.mean(x * (1.0 - pp)))
    denom = a0 - 2.0 * a1
    if not denom > 0:
        return float("inf"), float("nan")
    shape = 2.0 - a0 / denom
    scale = 2.0 * a0 * a1 / denom
    return shape, scale


def _gpd_quantile(p, shape, scale):
    if abs(shape) < 1e-12:
        return -scale * np.log1p(-p)
    return scale / shape * np.expm1(-shape * np.log1p(-p))


def psis_log_weights(log_ratios):
    """Pareto-smoothed log importance weights for one unit. Returns ``(lw, k)``."""
    lr = np.asarray(log_ratios, dtype=float).ravel()
    s = lr.size
    lw = lr - lr.max()
    m = int(math.ceil(min(0.2 * s, 3.0 * math.sqrt(s))))
    k = float("nan")
    if m >= 5 and s > m + 1:
        order = np.argsort(lw, kind="stable")
        tail_idx = order[-m:]
        cutoff = lw[order[-m - 1]]
        tail = np.exp(lw[tail_idx]) - math.exp(cutoff)
        if np.any(tail > 0):
            k, scale = _gpd_pwm(tail)
            if np.isfinite(k) and scale > 0:
                q = _gpd_quantile((np.arange(1, m + 1) - 0.5) / m, k, scale)
                smoothed = np.log(q + math.exp(cutoff))
                # largest ratio gets the largest quantile
                lw[tail_idx] = np.minimum(smoothed, 0.0)
    # truncate at S^(3/4) times the mean weight
    log_s = math.log(s)
    lw = np.minimum(lw, float(logsumexp(lw)) - log_s + 0.75 * log_s)
    return lw - float(logsumexp(lw)), k


def loo_pointwise(pointwise):
    """Per-unit PSIS-LOO expected log predictive densities and Pareto k."""
    ll = _check_pointwise(pointwise)
    if ll.shape[0] < 100:
        warnings.warn("fewer than 100 draws; PSIS-LOO estimates are unreliable", stacklevel=2)
    elpd = np.empty(ll.shape[1])
    ks = np.empty(ll.shape[1])
    for i in range(ll.shape[1]):
        lw, ks[i] = psis_log_weights(-ll[:, i])
        elpd[i] = float(logsumexp(lw + ll[:, i]))
    return elpd, ks


def loo_psis(pointwise) -> LooResult:
    elpd, ks = loo_pointwise(pointwise)
    total = float(np.sum(elpd))
    if np.any(ks > PARETO_K_WARN):
        warnings.warn(f"{int(np.sum(ks > PARETO_K_WARN))} units have Pareto k > {PARETO_K_WARN}", stacklevel=2)
    return LooResult(-2.0 * total, total, ks)


def cpo_lpml(pointwise):
    """Harmonic-mean CPO per unit and their log sum (LPML)."""
    ll = _check_pointwise(pointwise)
    log_cpo = -(logsumexp(-ll, axis=0) - math.log(ll.shape[0]))
    return np.exp(log_cpo), float(np.sum(log_cpo))


# -- outliers ------------------------------------------------------------------------


def outlier_probs(draws, data: SelectionData, threshold: float = 0.5):
    """Posterior mean probability that each unit comes from the inflated component.

    Selected units condition on their outcome; unselected units condition on
    the selection event only.
    """
    if draws.family != "cn":
        raise ValueError("outlier probabilities need a contaminated-normal fit")
    th = draws.merged()
    names = draws.names
    p, q = data.p, data.q
    beta = th[:, :p]
    gamma = th[:, p : p + q]
    col = lambda nm: th[:, names.index(nm)][:, None]  # noqa: E731
    sigma2, nu1, nu2 = col("sigma2"), col("nu1"), col("nu2")

    eps = np.empty((th.shape[0], data.n))
    xb = beta @ data.x_obs.T
    eps[:, data.obs] = cn_posterior_weight(data.v_obs[None, :], xb, sigma2, nu1, nu2)
    wg = gamma @ data.w_cens.T
    log_num = np.log(nu1) + log_std_normal_cdf(-wg * np.sqrt(nu2))
    eps[:, data.cens] = np.exp(log_num - cn_logcdf(0.0, wg, 1.0, nu1, nu2))
    eps_bar = np.clip(eps.mean(axis=0), 0.0, 1.0)
    return eps_bar, eps_bar > threshold


# -- reports -------------------------------------------------------------------------


@dataclass
class ParamSummary:
    name: str
    mean: float
    sd: float
    hpd_lower: float
    hpd_upper: float
    rhat: float
    ess_bulk: float


@dataclass
class FitReport:
    model: Dict
    summaries: List[ParamSummary]
    criteria: Dict
    diagnostics: Dict
    outliers: Optional[Dict] = None
    manifest: Dict = field(default_factory=dict)

    @property
    def params(self) -> Dict[str, float]:
        return {s.name: s.mean for s in self.summaries}

    def summary(self, name: str) -> ParamSummary:
        for s in self.summaries:
            if s.name == name:
                return s
        raise KeyError(name)

    def to_dict(self) -> Dict:
        out = {
            "model": self.model,
            "params": self.params,
            "summaries": [asdict(s) for s in self.summaries],
            "criteria": self.criteria,
            "diagnostics": self.diagnostics,
        }
        if self.outliers is not None:
            out["outliers"] = self.outliers
        out["manifest"] = self.manifest
        return _jsonable(out)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), indent=kw.pop("indent", 2), **kw)

    def to_text(self) -> str:
        """Aligned table: ME, SD, HPD bounds per parameter, then criteria."""
        head = f"{'Parameter':<10} {'ME':>10} {'SD':>10} {'HPD lower':>10} {'HPD upper':>10} {'R-hat':>7} {'ESS':>8}"
        lines = [f"Model: {self.model.get('label', '')}", head, "-" * len(head)]
        for s in self.summaries:
            lines.append(
                f"{s.name:<10} {s.mean:>10.3f} {s.sd:>10.3f} {s.hpd_lower:>10.3f} {s.hpd_upper:>10.3f}"
                f" {s.rhat:>7.3f} {s.ess_bulk:>8.0f}"
            )
        c = self.criteria
        lines.append("-" * len(head))
        lines.append(f"{'LOOIC':<12}{c['looic']:>12.3f}")
        lines.append(f"{'WAIC':<12}{c['waic']:>12.3f}")
        lines.append(f"{'CPO (LPML)':<12}{c['lpml']:>12.3f}")
        d = self.diagnostics
        lines.append(f"divergences: {d['n_divergent']}  mean acceptance: {d['mean_accept']:.3f}")
        for w in d.get("warnings", []):
            lines.append(f"warning: {w}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_dict(cls, d: Dict) -> "FitReport":
        return cls(
            model=d["model"],
            summaries=[ParamSummary(**s) for s in d["summaries"]],
            criteria=d["criteria"],
            diagnostics=d["diagnostics"],
            outliers=d.get("outliers"),
            manifest=d.get("manifest", {}),
        )


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def _safe(fn, *a, default=float("nan")):
    try:
        return fn(*a)
    except ValueError:
        return default


def _param_summary(name, chains: np.ndarray, mass) -> ParamSummary:
    flat = chains.ravel()
    sd = float(np.std(flat, ddof=1)) if flat.size > 1 else 0.0
    if flat.size >= 20:
        lo, hi = hpd_interval(flat, mass)
    else:
        lo, hi = float(flat.min()), float(flat.max())
    return ParamSummary(
        name=name, mean=float(flat.mean()), sd=sd, hpd_lower=lo, hpd_upper=hi,
        rhat=_safe(split_rhat, chains), ess_bulk=_safe(bulk_ess, chains),
    )


def criteria(pointwise) -> Dict:
    """LOOIC, WAIC and LPML plus their ingredients for one draws x units matrix."""
    ll = np.asarray(pointwise, dtype=float)
    if ll.shape[0] < 2:
        nan = float("nan")
        return dict(looic=nan, elpd_loo=nan, waic=nan, p_waic=nan, lppd=nan, lpml=nan, max_pareto_k=nan, n_high_k=0)
    w = waic(ll)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lo = loo_psis(ll)
    _, lpml = cpo_lpml(ll)
    ks = lo.pareto_k
    return dict(
        looic=lo.looic, elpd_loo=lo.elpd_loo, waic=w.waic, p_waic=w.p_waic, lppd=w.lppd, lpml=lpml,
        max_pareto_k=float(np.nanmax(ks)) if np.any(np.isfinite(ks)) else float("nan"),
        n_high_k=int(np.sum(ks > PARETO_K_WARN)),
    )


def summarize(draws, data: Optional[SelectionData] = None, mass: float = 0.95) -> FitReport:
    """Assemble a :class:`FitReport` from sampler output (constrained scale)."""
    lengths = {a.shape[0] for a in draws.params}
    if sum(lengths) == 0:
        raise ValueError("no draws to summarize")
    if len(lengths) == 1:
        stacked = draws.stacked()
    else:
        stacked = draws.merged()[None]
    summaries = [_param_summary(nm, stacked[:, :, j], mass) for j, nm in enumerate(draws.names)]
    crit = criteria(draws.merged_pointwise())

    warn = []
    rhats = [s.rhat for s in summaries if np.isfinite(s.rhat)]
    if rhats and max(rhats) > RHAT_WARN:
        warn.append(f"max R-hat {max(rhats):.3f} exceeds {RHAT_WARN}")
    if crit["n_high_k"]:
        warn.append(f"{crit['n_high_k']} units with Pareto k > {PARETO_K_WARN}")
    chains = draws.chains
    ess = [s.ess_bulk for s in summaries if np.isfinite(s.ess_bulk)]
    diag = dict(
        chains=draws.n_chains,
        draws_per_chain=[int(a.shape[0]) for a in draws.params],
        n_divergent=draws.n_divergent,
        divergent_fraction=draws.n_divergent / max(1, draws.config.draws * draws.n_chains),
        mean_accept=draws.mean_accept,
        step_size=[c.step_size for c in chains],
        mean_tree_depth=float(np.mean(np.concatenate([c.tree_depth for c in chains]))),
        max_rhat=max(rhats) if rhats else float("nan"),
        min_ess_bulk=min(ess) if ess else float("nan"),
        init=draws.init_method,
        warnings=warn,
    )
    n_units = draws.pointwise[0].shape[1]
    model = dict(label=MODEL_LABELS[draws.family], family=draws.family, n_units=int(n_units))
    if data is not None:
        model["n_selected"] = int(data.obs.size)
    outliers = None
    if draws.family == "cn" and data is not None:
        eps_bar, flags = outlier_probs(draws, data)
        outliers = dict(eps_bar=eps_bar, flags=flags, n_flagged=int(flags.sum()))
    return FitReport(model=model, summaries=summaries, criteria=crit, diagnostics=diag, outliers=outliers)
