"""End-to-end acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The simulation studies are expensive (tens of minutes on one core), so fits are
shared through session fixtures: the recovery check reuses the first five SLn
fits of the normal-data selection study, and the criteria consistency check
runs over every fit produced here.
"""
import math
import time

import numpy as np
import pytest

from heckman_smn.autodiff import fd_gradient, grad_log_posterior
from heckman_smn.cli import main
from heckman_smn.inference import summarize
from heckman_smn.nuts import SamplerConfig, run_chains, sample_chains
from heckman_smn.sel_model import PriorSpec, SelParams, dim, log_posterior_unconstrained, loglik, pointwise_loglik
from heckman_smn.sim_gen import SimConfig, run_replication, simulate
from heckman_smn.smn_dist import ContaminatedNormal, Normal, StudentT
from heckman_smn.inference import split_rhat

from ._helpers import unit_mass
from .conftest import make_data, record_criterion

pytestmark = pytest.mark.slow

STUDY_SAMPLER = SamplerConfig(warmup=1000, draws=2000, thin=1)
MODELS = ("normal", "t", "cn")
# fixed before any study was run
SEED_NORMAL_STUDY = 101
SEED_T_STUDY = 202
SEED_NU_STUDY = 303
SEED_OUTLIER = 404
SEED_DIAGNOSTICS = 505

ALL_FITS = []


def random_theta(rng, family):
    extra = {}
    if family == "t":
        extra = {"nu": float(rng.uniform(2.2, 30.0))}
    elif family == "cn":
        extra = {"nu1": float(rng.uniform(0.02, 0.95)), "nu2": float(rng.uniform(0.02, 0.95))}
    return SelParams(rng.normal(0, 1, 2), rng.normal(0, 1, 3), float(rng.uniform(0.3, 5.0)),
                     float(rng.uniform(-0.9, 0.9)), **extra)


@pytest.fixture(scope="session")
def normal_study():
    cfg = SimConfig(n=400, error_family=Normal(), replicates=10, seed=SEED_NORMAL_STUDY)
    rep = run_replication(cfg, MODELS, STUDY_SAMPLER)
    ALL_FITS.extend(r.report for r in rep.records)
    return rep


@pytest.fixture(scope="session")
def t_study():
    cfg = SimConfig(n=400, error_family=StudentT(3.0), replicates=10, seed=SEED_T_STUDY)
    rep = run_replication(cfg, MODELS, STUDY_SAMPLER)
    ALL_FITS.extend(r.report for r in rep.records)
    return rep


@pytest.fixture(scope="session")
def nu_study():
    cfg = SimConfig(n=800, error_family=StudentT(3.0), replicates=3, seed=SEED_NU_STUDY)
    rep = run_replication(cfg, ["t"], STUDY_SAMPLER)
    ALL_FITS.extend(r.report for r in rep.records)
    return rep


# -- 1 ------------------------------------------------------------------------------------


def test_ac01_gradient_correctness():
    t0 = time.perf_counter()
    worst = {}
    spec = PriorSpec()
    for fi, family in enumerate(MODELS):
        rng = np.random.default_rng(1000 + fi)
        errs = []
        for k in range(25):
            data = make_data(50, seed=int(rng.integers(1 << 30)), family=StudentT(4.0))
            u = rng.normal(0, 0.8, dim(family, 2, 3))
            g = grad_log_posterior(u, data, spec, family)
            f = lambda v: log_posterior_unconstrained(v, data, spec, family)  # noqa: E731
            fd = fd_gradient(u, f)
            errs.append(float(np.max(np.abs(g - fd) / np.maximum(1.0, np.abs(fd)))))
        worst[family] = max(errs)
    secs = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-5 and secs < 30
    detail = ", ".join(f"{k} max rel err {v:.1e}" for k, v in worst.items()) + f"; {secs:.1f}s"
    assert record_criterion("AC1 gradient correctness", ok, detail)


# -- 2 ------------------------------------------------------------------------------------


def test_ac02_likelihood_normalization():
    t0 = time.perf_counter()
    worst = {}
    for fi, family in enumerate(MODELS):
        rng = np.random.default_rng(2000 + fi)
        devs = []
        for _ in range(20):
            th = random_theta(rng, family)
            x_row = np.r_[1.0, rng.normal()]
            w_row = np.r_[1.0, rng.normal(size=2)]
            devs.append(abs(unit_mass(th, family, x_row, w_row) - 1.0))
        worst[family] = max(devs)
    secs = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-6 and secs < 60
    detail = ", ".join(f"{k} max |mass-1| {v:.1e}" for k, v in worst.items()) + f"; {secs:.1f}s"
    assert record_criterion("AC2 likelihood normalization", ok, detail)


# -- 3 ------------------------------------------------------------------------------------


def test_ac03_model_nesting():
    gaps, exact = [], True
    for seed in range(10):
        data = make_data(100, seed=3000 + seed, family=Normal())
        rng = np.random.default_rng(seed)
        # parameters in the region a fit to these data visits
        base = SelParams(np.array([1.0, 0.5]) + rng.normal(0, 0.2, 2), np.array([1.0, 0.3, -0.5]) + rng.normal(0, 0.2, 3),
                         float(3.0 * math.exp(rng.normal(0, 0.2))), float(np.clip(0.7 + rng.normal(0, 0.1), -0.95, 0.95)))
        t = SelParams(base.beta, base.gamma, base.sigma2, base.rho, nu=1e7)
        cn = SelParams(base.beta, base.gamma, base.sigma2, base.rho, nu1=float(rng.uniform(0.01, 0.99)), nu2=1.0)
        gaps.append(abs(float(loglik(t, data)) - float(loglik(base, data))))
        exact &= bool(np.array_equal(pointwise_loglik(cn, data, "cn"), pointwise_loglik(base, data)))
    ok = max(gaps) < 1e-3 and exact
    detail = f"max |l_SLt(1e7) - l_SLn| = {max(gaps):.1e}; SLcn(nu2=1) bitwise equal to SLn: {exact}"
    assert record_criterion("AC3 model nesting", ok, detail)


# -- 4 ------------------------------------------------------------------------------------


def test_ac04_sampler_calibration():
    sd = np.array([1.0, 1.2, 0.8, 1.0, 1.1])
    # strong equicorrelation keeps every covariance entry's MC error well under 10%
    corr = np.full((5, 5), 0.7) + 0.3 * np.eye(5)
    cov = corr * np.outer(sd, sd)
    mean = np.array([0.5, -1.0, 2.0, 0.0, 1.5])
    prec = np.linalg.inv(cov)

    def logp_grad(u):
        r = u - mean
        g = -prec @ r
        return 0.5 * float(r @ g), g

    t0 = time.perf_counter()
    cfg = SamplerConfig(warmup=1000, draws=2000, thin=1, chains=4, seed=44)
    chains = sample_chains(logp_grad, np.zeros(5), cfg)
    secs = time.perf_counter() - t0
    u = np.concatenate([c.u for c in chains])
    stacked = np.stack([c.u for c in chains])
    mean_err = float(np.max(np.abs(u.mean(0) - mean)))
    cov_rel = float(np.max(np.abs(np.cov(u.T) - cov) / np.abs(cov)))
    rhat = max(split_rhat(stacked[:, :, j]) for j in range(5))
    div = sum(c.n_divergent for c in chains) / (4 * 2000)
    ok = mean_err < 0.05 and cov_rel < 0.10 and rhat < 1.01 and div <= 0.005 and secs < 120
    detail = (f"max mean err {mean_err:.3f}, max cov rel err {cov_rel:.3f}, R-hat {rhat:.4f}, "
              f"divergent {100 * div:.2f}%, {secs:.0f}s")
    assert record_criterion("AC4 sampler calibration", ok, detail)


# -- 5 ------------------------------------------------------------------------------------

REFERENCE_ME_SLN = {"beta1": 1.055, "beta2": 0.486, "gamma1": 1.000, "gamma2": 0.305, "gamma3": -0.511,
                    "sigma2": 2.969, "rho": 0.589}
TOLERANCE = {"rho": 0.25, "sigma2": 0.4}
TRUTH = {"beta1": 1.0, "beta2": 0.5, "gamma1": 1.0, "gamma2": 0.3, "gamma3": -0.5, "sigma2": 3.0, "rho": 0.7}


def test_ac05_parameter_recovery(normal_study):
    recs = [r for r in normal_study.records if r.model == "normal" and r.replicate < 5]
    assert len(recs) == 5
    secs = sum(r.seconds for r in recs)
    means, covered, cells = {}, 0, 0
    for name in REFERENCE_ME_SLN:
        ss = [r.report.summary(name) for r in recs]
        means[name] = float(np.mean([s.mean for s in ss]))
        for s in ss:
            cells += 1
            covered += s.hpd_lower <= TRUTH[name] <= s.hpd_upper
    off = {k: abs(means[k] - REFERENCE_ME_SLN[k]) for k in REFERENCE_ME_SLN}
    within = all(off[k] <= TOLERANCE.get(k, 0.2) for k in off)
    cover = covered / cells
    ok = within and cover >= 0.8 and secs < 15 * 60
    detail = ("mean ME " + ", ".join(f"{k} {means[k]:.3f}" for k in means)
              + f"; HPD coverage {100 * cover:.0f}%; {secs:.0f}s")
    assert record_criterion("AC5 parameter recovery (normal data)", ok, detail)


# -- 6 ------------------------------------------------------------------------------------


def test_ac06_nu_recovery(nu_study):
    nus = [r.report.summary("nu").mean for r in nu_study.records]
    hits = sum(2.2 <= v <= 4.6 for v in nus)
    secs = nu_study.seconds()
    ok = len(nus) == 3 and hits >= 2 and secs < 20 * 60
    detail = f"posterior mean nu {[round(v, 3) for v in nus]}; {hits}/3 in [2.2, 4.6]; {secs:.0f}s"
    assert record_criterion("AC6 nu recovery (t data, n=800)", ok, detail)


# -- 7 ------------------------------------------------------------------------------------


def test_ac07_selection_t_data(t_study):
    winners = t_study.winners()["looic"]
    heavy = sum(w in ("t", "cn") for w in winners)
    secs = t_study.seconds()
    ok = len(winners) == 10 and heavy >= 9 and secs < 45 * 60
    detail = f"LOOIC picks SLt/SLcn in {heavy}/{len(winners)} ({winners}); {secs / 60:.1f} min"
    assert record_criterion("AC7 model selection (t data)", ok, detail)


# -- 8 ------------------------------------------------------------------------------------


def test_ac08_selection_normal_data(normal_study):
    winners = normal_study.winners()["looic"]
    sln = winners.count("normal")
    ok = len(winners) == 10 and sln >= 6
    detail = f"LOOIC picks SLn in {sln}/{len(winners)} ({winners}); {normal_study.seconds() / 60:.1f} min"
    assert record_criterion("AC8 model selection (normal data)", ok, detail)


# -- 10 -----------------------------------------------------------------------------------


@pytest.fixture(scope="session")
def outlier_fit():
    cfg = SimConfig(n=400, error_family=ContaminatedNormal(0.25, 0.1), seed=SEED_OUTLIER)
    sample = simulate(cfg, np.random.default_rng(SEED_OUTLIER))
    t0 = time.perf_counter()
    data = sample.data
    draws = run_chains(data, family="cn", config=SamplerConfig(warmup=1000, draws=2000, thin=1, seed=SEED_OUTLIER))
    report = summarize(draws, data)
    ALL_FITS.append(report)
    return sample, report, time.perf_counter() - t0


def test_ac10_outlier_detection(outlier_fit):
    sample, report, secs = outlier_fit
    flags = np.asarray(report.outliers["flags"], bool)
    obs = sample.c == 1
    z = sample.e1 / math.sqrt(3.0)
    contaminated = obs & (sample.mixing == 0.1) & (np.abs(z) > 3)
    clean = obs & (sample.mixing == 1.0) & (np.abs(z) < 1)
    hit = float(flags[contaminated].mean())
    false = float(flags[clean].mean())
    ok = hit >= 0.8 and false <= 0.05 and secs < 10 * 60
    detail = (f"flagged {100 * hit:.0f}% of {contaminated.sum()} contaminated |z|>3 units, "
              f"{100 * false:.1f}% of {clean.sum()} clean |z|<1 units; {secs:.0f}s")
    assert record_criterion("AC10 outlier detection", ok, detail)


# -- 11 -----------------------------------------------------------------------------------


def test_ac11_diagnostics_band():
    cfg = SimConfig(n=400, error_family=Normal(), seed=SEED_DIAGNOSTICS)
    data = simulate(cfg, np.random.default_rng(SEED_DIAGNOSTICS)).data
    # package defaults apart from the chain count
    sampler = SamplerConfig(chains=4, seed=SEED_DIAGNOSTICS)
    draws = run_chains(data, family="normal", config=sampler)
    report = summarize(draws, data)
    ALL_FITS.append(report)
    acc = report.diagnostics["mean_accept"]
    rhat = report.diagnostics["max_rhat"]
    div = report.diagnostics["divergent_fraction"]
    ok = 0.65 <= acc <= 0.95 and rhat < 1.01 and div < 0.01
    detail = f"mean acceptance {acc:.3f}, max R-hat {rhat:.4f}, divergent {100 * div:.2f}% ({sampler.draws} draws x 4 chains)"
    assert record_criterion("AC11 diagnostics band", ok, detail)


# -- 12 -----------------------------------------------------------------------------------


def test_ac12_determinism(tmp_path):
    data = tmp_path / "d.csv"
    main(["simulate", "--n", "200", "--seed", "12", "--out", str(data), "--quiet"])
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        code = main(["fit", str(data), "--outcome", "y", "--x", "x1", "--w", "w1,w2", "--family", "t",
                     "--warmup", "200", "--draws", "300", "--thin", "1", "--chains", "2", "--seed", "7",
                     "--out", str(out), "--quiet"])
        assert code == 0
        outs.append((out / "draws.csv").read_bytes())
    ok = outs[0] == outs[1]
    assert record_criterion("AC12 determinism", ok, f"draws.csv identical across runs: {ok} ({len(outs[0])} bytes)")


# -- 9 (runs last: checks every fit above) ------------------------------------------------


def test_ac09_criteria_consistency(normal_study, t_study, nu_study, outlier_fit):
    bad, close_checked, close_bad = [], 0, 0
    for rep in ALL_FITS:
        c = rep.criteria
        n = rep.model["n_units"]
        if not (c["lppd"] >= c["elpd_loo"] and c["lppd"] >= c["lpml"] and c["p_waic"] >= 0):
            bad.append(rep.model["label"])
        if c["max_pareto_k"] < 0.5:
            close_checked += 1
            close_bad += abs(c["waic"] - c["looic"]) >= 0.05 * n
    ok = not bad and close_bad == 0 and len(ALL_FITS) > 0
    detail = (f"{len(ALL_FITS)} fits: ordering violations {len(bad)}; "
              f"|WAIC-LOOIC| >= 0.05n in {close_bad}/{close_checked} fits with all k < 0.5")
    assert record_criterion("AC9 criteria consistency", ok, detail)
