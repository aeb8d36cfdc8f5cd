"""Synthetic selection data and the Monte Carlo replication harness."""
from __future__ import annotations

import csv
import json
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .inference import FitReport, _jsonable, summarize
from .nuts import SamplerConfig, SamplerError, run_chains
from .sel_model import MODEL_LABELS, PriorSpec, SelectionData, SelParams, check_family
from .smn_dist import ContaminatedNormal, ErrorFamily, Normal, SelectionScale, Slash, StudentT, sample_bivariate_error
from .special_fn import DomainError



def default_truth() -> SelParams:
    return SelParams(np.array([1.0, 0.5]), np.array([1.0, 0.3, -0.5]), 3.0, 0.7)


def parse_error_family(name: str, nu: Optional[float] = None, nu1: float = 0.25, nu2: float = 0.1) -> ErrorFamily:
    """``normal | t | slash | cn`` with optional tail parameters."""
    key = name.lower()
    if key == "normal":
        return Normal()
    if key in ("t", "student", "studentt"):
        return StudentT(3.0 if nu is None else nu)
    if key == "slash":
        return Slash(1.43 if nu is None else nu)
    if key in ("cn", "contaminated"):
        return ContaminatedNormal(nu1, nu2)
    raise ValueError(f"unknown error family {name!r}")


def family_to_dict(fam: ErrorFamily) -> Dict:
    d = {"name": fam.name}
    d.update(asdict(fam))
    return d


@dataclass(frozen=True)
class SimConfig:
    n: int = 400
    error_family: ErrorFamily = Normal()
    true_params: SelParams = field(default_factory=default_truth)
    replicates: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.n < 50:
            raise ValueError("n must be >= 50")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        th = self.true_params
        if np.size(th.beta) != 2 or np.size(th.gamma) != 3:
            raise ValueError("the generator uses 2 outcome and 3 selection coefficients")

    def truth_dict(self) -> Dict:
        th = self.true_params
        return {
            "beta": np.asarray(th.beta, float).tolist(),
            "gamma": np.asarray(th.gamma, float).tolist(),
            "sigma2": float(th.sigma2),
            "rho": float(th.rho),
            "error_family": family_to_dict(self.error_family),
            "n": self.n,
            "seed": self.seed,
        }


@dataclass
class SimulatedSample:
    """Raw draw including latent quantities; ``data`` validates on access."""

    y: np.ndarray
    c: np.ndarray
    x: np.ndarray
    w: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    mixing: np.ndarray

    @property
    def data(self) -> SelectionData:
        return SelectionData(self.y, self.c, self.x, self.w)

    @property
    def missing_rate(self) -> float:
        return float(np.mean(self.c == 0))


def simulate(cfg: SimConfig, rng: np.random.Generator) -> SimulatedSample:
    """Draw covariates, errors and the selection outcome."""
    n = cfg.n
    th = cfg.true_params
    w = np.column_stack([np.ones(n), rng.standard_normal((n, 2))])
    x = w[:, :2].copy()
    e1, e2, u = sample_bivariate_error(cfg.error_family, SelectionScale(float(th.sigma2), float(th.rho)), rng, n)
    y2 = w @ np.asarray(th.gamma, float) + e2
    c = (y2 > 0).astype(np.int8)
    y = np.where(c == 1, x @ np.asarray(th.beta, float) + e1, np.nan)
    return SimulatedSample(y, c, x, w, e1, e2, u)


def generate_dataset(cfg: SimConfig, rng: np.random.Generator) -> SelectionData:
    return simulate(cfg, rng).data


def replicate_rng(seed: int, replicate: int) -> np.random.Generator:
    """Data stream for one replicate of a study."""
    return np.random.default_rng(np.random.SeedSequence([seed, replicate, 0]))


def replicate_fit_seed(seed: int, replicate: int) -> int:
    """Sampler seed for one replicate, independent of its data stream."""
    return int(np.random.SeedSequence([seed, replicate, 1]).generate_state(1)[0])


# -- replication ------------------------------------------------------------------------


@dataclass
class FitRecord:
    replicate: int
    model: str
    report: FitReport
    seconds: float = 0.0


@dataclass
class ReplicationReport:
    config: Dict
    models: List[str]
    records: List[FitRecord]
    failures: List[Dict]
    param_names: Dict[str, List[str]]
    truth: Dict[str, float]

    def fits(self, model: str) -> List[FitReport]:
        return [r.report for r in self.records if r.model == model]

    def seconds(self, model: Optional[str] = None) -> float:
        """Total sampling wall time, optionally for one model."""
        return float(sum(r.seconds for r in self.records if model is None or r.model == model))

    @property
    def n_failures(self) -> int:
        return len(self.failures)

    def complete_replicates(self) -> List[int]:
        reps = sorted({r.replicate for r in self.records})
        have = {(r.replicate, r.model) for r in self.records}
        return [i for i in reps if all((i, m) in have for m in self.models)]

    def table(self) -> List[Dict]:
        """One row per model x parameter: averages over replicates."""
        rows = []
        for m in self.models:
            fits = self.fits(m)
            if not fits:
                continue
            for name in self.param_names[m]:
                ss = [f.summary(name) for f in fits]
                rows.append(dict(
                    model=MODEL_LABELS[m], parameter=name, true=self.truth.get(name, float("nan")),
                    ME=float(np.mean([s.mean for s in ss])), SD=float(np.mean([s.sd for s in ss])),
                    HPD_lower=float(np.mean([s.hpd_lower for s in ss])),
                    HPD_upper=float(np.mean([s.hpd_upper for s in ss])), replicates=len(ss),
                ))
        return rows

    def mean_criteria(self) -> Dict[str, Dict[str, float]]:
        out = {}
        for m in self.models:
            fits = self.fits(m)
            if fits:
                out[MODEL_LABELS[m]] = {
                    k: float(np.mean([f.criteria[k] for f in fits])) for k in ("looic", "waic", "lpml")
                }
        return out

    def winners(self) -> Dict[str, List[str]]:
        """Per criterion, the winning family in each complete replicate."""
        out = {"looic": [], "waic": [], "lpml": []}
        for i in self.complete_replicates():
            crit = {r.model: r.report.criteria for r in self.records if r.replicate == i}
            out["looic"].append(min(self.models, key=lambda m: crit[m]["looic"]))
            out["waic"].append(min(self.models, key=lambda m: crit[m]["waic"]))
            out["lpml"].append(max(self.models, key=lambda m: crit[m]["lpml"]))
        return out

    def selection_percentages(self) -> Dict[str, Dict[str, float]]:
        res = {}
        for k, wins in self.winners().items():
            tot = len(wins)
            res[k] = {MODEL_LABELS[m]: (100.0 * wins.count(m) / tot if tot else float("nan")) for m in self.models}
        return res

    def to_dict(self) -> Dict:
        return _jsonable(dict(
            config=self.config,
            models=[MODEL_LABELS[m] for m in self.models],
            table=self.table(),
            criteria=self.mean_criteria(),
            selection_percent=self.selection_percentages(),
            replicates=[
                dict(replicate=r.replicate, model=MODEL_LABELS[r.model], criteria=r.report.criteria,
                     summaries=r.report.to_dict()["summaries"], diagnostics=r.report.diagnostics)
                for r in self.records
            ],
            failures=self.failures,
        ))

    def to_json(self, path=None) -> str:
        s = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(s)
        return s

    def to_csv(self, path):
        cols = ["model", "parameter", "true", "ME", "SD", "HPD_lower", "HPD_upper", "replicates"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.DictWriter(fh, fieldnames=cols)
            wr.writeheader()
            for row in self.table():
                wr.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def _truth_names(th: SelParams) -> Dict[str, float]:
    out = {f"beta{j + 1}": float(v) for j, v in enumerate(np.asarray(th.beta, float))}
    out.update({f"gamma{k + 1}": float(v) for k, v in enumerate(np.asarray(th.gamma, float))})
    out.update(sigma2=float(th.sigma2), rho=float(th.rho))
    return out


def fit_one(data: SelectionData, family: str, sampler_cfg: SamplerConfig, prior: PriorSpec = PriorSpec()) -> FitReport:
    draws = run_chains(data, prior, family, sampler_cfg)
    return summarize(draws, data)


def run_replication(cfg: SimConfig, models: Sequence[str] = ("normal", "t", "cn"),
                    sampler_cfg: SamplerConfig = SamplerConfig(warmup=1000, draws=3000, thin=1),
                    prior: PriorSpec = PriorSpec(), workers: int = 1,
                    progress: Optional[Callable[[int, str], None]] = None) -> ReplicationReport:
    """Generate ``cfg.replicates`` datasets and fit every requested family to each."""
    models = [check_family(m) for m in models]
    if not models:
        raise ValueError("no models requested")

    def job(i):
        data = generate_dataset(cfg, replicate_rng(cfg.seed, i))
        fit_seed = replicate_fit_seed(cfg.seed, i)
        recs, fails = [], []
        for m in models:
            if progress is not None:
                progress(i, m)
            t0 = time.perf_counter()
            try:
                rep = fit_one(data, m, replace(sampler_cfg, seed=fit_seed), prior)
                recs.append(FitRecord(i, m, rep, time.perf_counter() - t0))
            except (SamplerError, DomainError, FloatingPointError, np.linalg.LinAlgError) as exc:
                fails.append(dict(replicate=i, model=MODEL_LABELS[m], error=str(exc)))
        return recs, fails

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(job, range(cfg.replicates)))
    else:
        results = [job(i) for i in range(cfg.replicates)]
    records = [r for rs, _ in results for r in rs]
    failures = [f for _, fs in results for f in fs]
    for f in failures:
        warnings.warn(f"replicate {f['replicate']} {f['model']} failed: {f['error']}", stacklevel=2)

    names = {}
    for m in models:
        fits = [r for r in records if r.model == m]
        names[m] = [s.name for s in fits[0].report.summaries] if fits else []
    config = dict(
        n=cfg.n, replicates=cfg.replicates, seed=cfg.seed, error_family=family_to_dict(cfg.error_family),
        truth=cfg.truth_dict(), sampler=asdict(sampler_cfg), models=[MODEL_LABELS[m] for m in models],
    )
    return ReplicationReport(config, models, records, failures, names, _truth_names(cfg.true_params))
