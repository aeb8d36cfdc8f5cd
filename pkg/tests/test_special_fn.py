import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from heckman_smn import dual as D
from heckman_smn.special_fn import (
    DomainError,
    betainc,
    digamma,
    log_beta,
    log_gamma,
    log_std_normal_cdf,
    log_student_t_cdf,
    log_sum_exp,
    std_normal_cdf,
    student_t_cdf,
)

# quadrature of the densities at 50 digits; regenerate with scripts/freeze_oracles.py
PHI_1_959964 = 0.9750000009035575957
T6_AT_1_5 = 0.90785963192925898449


def test_normal_cdf_basic_values():
    assert std_normal_cdf(0.0) == 0.5
    assert std_normal_cdf(-np.inf) == 0.0
    assert std_normal_cdf(1.959964) == pytest.approx(PHI_1_959964, abs=1e-15)


@given(st.floats(-40, 40))
def test_normal_cdf_symmetry(x):
    assert std_normal_cdf(x) + std_normal_cdf(-x) == pytest.approx(1.0, abs=1e-15)


def test_normal_cdf_monotone():
    rng = np.random.default_rng(0)
    a, b = rng.normal(scale=5, size=(2, 10_000))
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    assert np.all(std_normal_cdf(lo) <= std_normal_cdf(hi))


def test_log_normal_cdf_deep_tail():
    for x in (-8.5, -20.0, -37.5, -60.0):
        v = log_std_normal_cdf(x)
        assert np.isfinite(v)
        # Mills-ratio asymptote; truncation error is below the next term 105/x^8
        series = -1 / x**2 + 3 / x**4 - 15 / x**6
        approx = -0.5 * x * x - 0.5 * math.log(2 * math.pi) - math.log(-x) + math.log1p(series)
        assert v == pytest.approx(approx, abs=2 * 105 / x**8)


def test_t_cdf_values():
    assert student_t_cdf(0.0, 3.7) == 0.5
    assert student_t_cdf(1.0, 1.0) == pytest.approx(0.75, abs=1e-14)
    assert student_t_cdf(1.5, 6.0) == pytest.approx(T6_AT_1_5, abs=1e-10)


@given(st.floats(-30, 30), st.floats(0.3, 200))
def test_t_cdf_symmetry(x, nu):
    assert student_t_cdf(x, nu) + student_t_cdf(-x, nu) == pytest.approx(1.0, abs=1e-13)


@given(st.floats(-12, 12), st.floats(0.5, 60))
def test_t_cdf_against_scipy(x, nu):
    assert student_t_cdf(x, nu) == pytest.approx(stats.t.cdf(x, nu), rel=1e-11, abs=1e-300)


def test_t_cdf_normal_limit():
    x = np.linspace(-6, 6, 241)
    assert np.max(np.abs(student_t_cdf(x, 1e6) - std_normal_cdf(x))) < 1e-5


def test_t_cdf_domain():
    with pytest.raises(DomainError):
        student_t_cdf(0.3, 0.0)
    with pytest.raises(DomainError):
        student_t_cdf(0.3, -1.0)


def test_log_t_cdf_consistent_with_cdf():
    x = np.linspace(-50, 20, 300)
    lf = log_student_t_cdf(x, 3.0)
    f = student_t_cdf(x, 3.0)
    ok = f > 1e-200
    assert np.allclose(np.exp(lf[ok]), f[ok], rtol=1e-12, atol=0)


def test_log_gamma_values():
    assert log_gamma(1.0) == 0.0
    assert log_gamma(0.5) == pytest.approx(0.5723649429247001, abs=1e-12)
    x = 7.3
    assert log_gamma(x + 1) - log_gamma(x) == pytest.approx(math.log(x), abs=1e-12)
    with pytest.raises(DomainError):
        log_gamma(0.0)
    with pytest.raises(DomainError):
        log_gamma(-2.5)


@given(st.floats(0.5, 1e6))
def test_log_gamma_matches_math(x):
    assert log_gamma(x) == pytest.approx(math.lgamma(x), abs=1e-12 * max(1.0, abs(math.lgamma(x))))


def test_digamma_and_log_beta():
    assert digamma(1.0) == pytest.approx(-0.5772156649015329, abs=1e-13)
    assert log_beta(2.0, 6.0) == pytest.approx(-math.log(42.0), abs=1e-13)


@given(st.floats(0.05, 50), st.floats(0.05, 50), st.floats(0.0, 1.0))
def test_betainc_against_scipy(a, b, x):
    from scipy.special import betainc as ref

    assert betainc(a, b, x) == pytest.approx(ref(a, b, x), rel=1e-10, abs=1e-14)


def test_log_sum_exp():
    assert log_sum_exp(0.0, 0.0) == pytest.approx(math.log(2.0), abs=1e-15)
    assert log_sum_exp(-np.inf, 1.25) == 1.25
    assert log_sum_exp(1.25, -np.inf) == 1.25
    assert log_sum_exp(1000.0, 1000.5) == pytest.approx(1000.5 + math.log1p(math.exp(-0.5)), abs=1e-12)


@given(st.floats(-700, 700), st.floats(-700, 700))
def test_log_sum_exp_commutes(a, b):
    assert log_sum_exp(a, b) == log_sum_exp(b, a)


@pytest.mark.parametrize(
    "fn,args",
    [
        (std_normal_cdf, (0.37,)),
        (log_std_normal_cdf, (-9.1,)),
        (student_t_cdf, (1.3, 4.2)),
        (log_student_t_cdf, (-2.2, 3.1)),
        (log_gamma, (3.3,)),
        (digamma, (0.9,)),
    ],
)
def test_zero_tangent_reproduces_plain_value(fn, args):
    plain = fn(*args)
    duals = [D.Dual.direction(np.float64(a), np.zeros(1)) for a in args]
    assert D.value(fn(*duals)) == plain


def test_t_cdf_derivatives_against_fd():
    for x, nu in [(0.7, 3.0), (-2.5, 7.5), (4.0, 2.2), (-0.01, 15.0)]:
        d = log_student_t_cdf(D.Dual.seed(np.array(x)), D.Dual.direction(np.array(nu), [0.0]))
        gx = float(d.tan[0])
        h = 1e-6
        fd = (log_student_t_cdf(x + h, nu) - log_student_t_cdf(x - h, nu)) / (2 * h)
        assert gx == pytest.approx(fd, rel=1e-7)
        dn = log_student_t_cdf(D.Dual.direction(np.array(x), [0.0]), D.Dual.seed(np.array(nu)))
        fdn = (log_student_t_cdf(x, nu + h) - log_student_t_cdf(x, nu - h)) / (2 * h)
        assert float(dn.tan[0]) == pytest.approx(fdn, rel=1e-6, abs=1e-10)


def test_t_cdf_matches_quadrature_of_pdf():
    pdf = lambda t: math.exp(log_gamma(3.25) - log_gamma(2.75) - 0.5 * math.log(5.5 * math.pi) - 3.25 * math.log1p(t * t / 5.5))
    val, _ = integrate.quad(pdf, -np.inf, -0.8, epsabs=1e-14, epsrel=1e-13)
    assert student_t_cdf(-0.8, 5.5) == pytest.approx(val, abs=1e-10)
