import math

import numpy as np
import pytest
from scipy import stats

from heckman_smn.inference import bulk_ess, split_rhat
from heckman_smn.nuts import (
    AdaptState,
    DualAveraging,
    SamplerConfig,
    SamplerError,
    State,
    WindowSchedule,
    chain_rng,
    leapfrog,
    nuts_transition,
    run_chains,
    sample,
    sample_chains,
)


def gaussian(prec, mean=None):
    mean = np.zeros(prec.shape[0]) if mean is None else mean

    def f(u):
        r = u - mean
        g = -prec @ r
        return -0.5 * float(r @ prec @ r), g

    return f


def correlated_cov():
    sd = np.array([1.0, 2.0, 0.5, 1.5, 3.0])
    idx = np.arange(5)
    corr = (-0.6) ** np.abs(idx[:, None] - idx[None, :])
    return corr * np.outer(sd, sd)


def test_leapfrog_is_reversible():
    prec = np.linalg.inv(correlated_cov())
    grad = lambda q: gaussian(prec)(q)[1]  # noqa: E731
    rng = np.random.default_rng(0)
    q0, p0 = rng.normal(size=5), rng.normal(size=5)
    q, p = q0, p0
    for _ in range(20):
        q, p = leapfrog(q, p, 0.1, grad, np.ones(5))
    p = -p
    for _ in range(20):
        q, p = leapfrog(q, p, 0.1, grad, np.ones(5))
    assert np.allclose(q, q0, atol=1e-12) and np.allclose(-p, p0, atol=1e-12)


def test_leapfrog_preserves_volume():
    # the leapfrog map is linear on a Gaussian target; its determinant must be 1
    prec = np.array([[2.0, 0.3], [0.3, 0.5]])
    grad = lambda q: -prec @ q  # noqa: E731
    inv_mass = np.array([1.0, 3.0])
    jac = np.zeros((4, 4))
    for j in range(4):
        z = np.zeros(4)
        z[j] = 1.0
        q, p = leapfrog(z[:2], z[2:], 0.37, grad, inv_mass)
        jac[:, j] = np.r_[q, p]
    assert np.linalg.det(jac) == pytest.approx(1.0, abs=1e-12)


def test_energy_error_is_second_order():
    prec = np.diag([1.0, 4.0])
    f = gaussian(prec)
    q0, p0 = np.array([1.0, -0.5]), np.array([0.3, 1.2])

    def drift(eps):
        q, p = q0, p0
        for _ in range(int(round(1.0 / eps))):
            q, p = leapfrog(q, p, eps, lambda x: f(x)[1], np.ones(2))
        h = lambda q, p: -f(q)[0] + 0.5 * p @ p  # noqa: E731
        return abs(h(q, p) - h(q0, p0))

    ratio = drift(0.02) / drift(0.01)
    assert 3.0 < ratio < 5.0


def test_window_schedule():
    assert WindowSchedule(1000).window_ends() == [99, 149, 249, 449, 949]
    sched = WindowSchedule(150)
    ends = sched.window_ends()
    assert ends and ends[-1] == 150 - sched.term_buffer - 1
    assert WindowSchedule(10).window_ends() == []


def test_dual_averaging_drives_statistic_to_target():
    da = DualAveraging(0.8)
    da.restart(1.0)
    # acceptance decreasing in the step size: a(eps) = exp(-eps)
    eps = 1.0
    for _ in range(2000):
        eps = da.update(math.exp(-eps))
    assert math.exp(-da.final_step_size) == pytest.approx(0.8, abs=0.02)


def test_one_dimensional_standard_normal_is_calibrated():
    f = gaussian(np.eye(1))
    cfg = SamplerConfig(warmup=300, draws=4000, thin=1, seed=3)
    ch = sample(f, np.array([2.0]), cfg, chain_rng(3, 0))
    x = ch.u[:, 0]
    # thin to roughly independent draws before the KS test
    assert stats.kstest(x[::4], "norm").pvalue > 0.01
    assert abs(ch.mean_accept - 0.85) < 0.1


def test_correlated_gaussian_moments():
    cov = correlated_cov()
    mean = np.array([1.0, -2.0, 0.5, 0.0, 3.0])
    f = gaussian(np.linalg.inv(cov), mean)
    cfg = SamplerConfig(warmup=500, draws=1500, thin=1, chains=2, seed=1)
    chains = sample_chains(f, mean + 1.0, cfg)
    u = np.concatenate([c.u for c in chains])
    assert np.all(np.abs(u.mean(0) - mean) < 4 * np.sqrt(np.diag(cov) / 400))
    assert np.allclose(np.cov(u.T), cov, rtol=0.2, atol=0.1 * np.sqrt(np.outer(np.diag(cov), np.diag(cov))).max())
    stacked = np.stack([c.u for c in chains])
    for j in range(5):
        assert split_rhat(stacked[:, :, j]) < 1.02
        assert bulk_ess(stacked[:, :, j]) > 400
    assert sum(c.n_divergent for c in chains) == 0


def test_same_seed_same_draws():
    f = gaussian(np.eye(3))
    cfg = SamplerConfig(warmup=100, draws=200, thin=1, seed=42)
    a = sample(f, np.ones(3), cfg, chain_rng(42, 0))
    b = sample(f, np.ones(3), cfg, chain_rng(42, 0))
    c = sample(f, np.ones(3), cfg, chain_rng(42, 1))
    assert np.array_equal(a.u, b.u) and not np.array_equal(a.u, c.u)


def test_thinning_keeps_every_kth():
    f = gaussian(np.eye(2))
    cfg = SamplerConfig(warmup=100, draws=100, thin=7, seed=0)
    ch = sample(f, np.zeros(2), cfg, chain_rng(0, 0))
    assert ch.u.shape == (14, 2) and cfg.n_kept == 14


def test_treedepth_zero_is_single_metropolis_step():
    f = gaussian(np.eye(2))
    adapt = AdaptState.create(2, SamplerConfig(warmup=0, adapt=False, draws=1))
    adapt.step_size = 0.5
    rng = np.random.default_rng(0)
    lp, g = f(np.array([0.5, -0.5]))
    state = State(np.array([0.5, -0.5]), lp, g)
    for _ in range(50):
        state, st = nuts_transition(state, f, adapt, rng, max_treedepth=0)
        assert st.n_leapfrog == 1 and 0.0 <= st.accept_stat <= 1.0 and st.tree_depth <= 1


def test_tree_depth_capped():
    f = gaussian(np.eye(2))
    adapt = AdaptState.create(2, SamplerConfig(warmup=0, adapt=False, draws=1))
    adapt.step_size = 1e-3  # tiny steps would otherwise build deep trees
    rng = np.random.default_rng(1)
    lp, g = f(np.ones(2))
    _, st = nuts_transition(State(np.ones(2), lp, g), f, adapt, rng, max_treedepth=4)
    assert st.tree_depth == 4 and st.n_leapfrog == 15


def test_divergence_is_flagged():
    f = gaussian(np.diag([1.0, 1e6]))
    adapt = AdaptState.create(2, SamplerConfig(warmup=0, adapt=False, draws=1))
    adapt.step_size = 0.5
    lp, g = f(np.array([0.0, 0.01]))
    _, st = nuts_transition(State(np.array([0.0, 0.01]), lp, g), f, adapt, np.random.default_rng(2))
    assert st.divergent


def test_non_finite_start_rejected():
    f = lambda u: (-np.inf, np.zeros_like(u))  # noqa: E731
    with pytest.raises(SamplerError):
        sample(f, np.zeros(2), SamplerConfig(warmup=100, draws=10), chain_rng(0, 0))


@pytest.mark.parametrize(
    "kw",
    [dict(warmup=50), dict(draws=0), dict(thin=0), dict(chains=0), dict(max_treedepth=-1),
     dict(target_accept=1.0), dict(seed=-1), dict(init="mle"), dict(init_radius=0.0)],
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SamplerConfig(**kw)


def test_run_chains_on_selection_model(data100):
    cfg = SamplerConfig(warmup=150, draws=100, thin=1, chains=2, seed=5)
    draws = run_chains(data100, family="normal", config=cfg)
    assert draws.merged().shape == (200, 7)
    assert draws.merged_pointwise().shape == (200, 100)
    assert draws.init_method == "two-step"
    assert np.all(draws.column("sigma2") > 0) and np.all(np.abs(draws.column("rho")) < 1)
    again = run_chains(data100, family="normal", config=cfg)
    assert np.array_equal(draws.merged(), again.merged())


def test_random_init(data50):
    cfg = SamplerConfig(warmup=100, draws=20, thin=1, seed=2, init="random", init_radius=0.5)
    draws = run_chains(data50, family="t", config=cfg)
    assert draws.init_method == "random" and draws.merged().shape == (20, 8)
