"""Recompute the high-precision reference values frozen into the test suite.

    python3 scripts/freeze_oracles.py

Everything here is evaluated with mpmath at 50 digits, independently of the
package code, and printed for pasting into tests/test_special_fn.py and
tests/test_sel_model.py.
"""
import mpmath as mp

mp.mp.dps = 50

TOY_V = [mp.mpf("1.3"), None, mp.mpf("-0.4")]
TOY_X = [[1, "0.5"], [1, "-1.2"], [1, "2.0"]]
TOY_W = [[1, "0.5", "0.3"], [1, "-1.2", "1.1"], [1, "2.0", "-0.7"]]
BETA = [mp.mpf("0.8"), mp.mpf("0.4")]
GAMMA = [mp.mpf("0.6"), mp.mpf("0.2"), mp.mpf("-0.5")]
SIGMA2, RHO = mp.mpf("2.5"), mp.mpf("0.6")
NU = mp.mpf("4.5")
NU1, NU2 = mp.mpf("0.3"), mp.mpf("0.15")


def dot(a, b):
    return mp.fsum(mp.mpf(x) * mp.mpf(y) for x, y in zip(a, b))


def norm_pdf(x, var):
    return mp.exp(-x * x / (2 * var)) / mp.sqrt(2 * mp.pi * var)


def t_pdf(x, var, nu):
    return mp.gamma((nu + 1) / 2) / (mp.gamma(nu / 2) * mp.sqrt(mp.pi * nu * var)) * (1 + x * x / (nu * var)) ** (-(nu + 1) / 2)


def by_quad(pdf, b):
    # cdf as an integral of the density, not via a closed form
    return mp.quad(pdf, [-mp.inf, 0, b]) if b > 0 else mp.quad(pdf, [-mp.inf, b])


def unit(i, family):
    wg = dot(TOY_W[i], GAMMA)
    if TOY_V[i] is None:
        if family == "normal":
            return mp.log(by_quad(lambda t: norm_pdf(t, 1), -wg))
        if family == "t":
            return mp.log(by_quad(lambda t: t_pdf(t, 1, NU), -wg))
        return mp.log(by_quad(lambda t: NU1 * norm_pdf(t, 1 / NU2) + (1 - NU1) * norm_pdf(t, 1), -wg))
    r = TOY_V[i] - dot(TOY_X[i], BETA)
    mu = wg + RHO / mp.sqrt(SIGMA2) * r
    s2 = 1 - RHO**2
    if family == "normal":
        return mp.log(norm_pdf(r, SIGMA2) * by_quad(lambda t: norm_pdf(t, s2), mu))
    if family == "t":
        d = r * r / SIGMA2
        sc = (NU + d) / (NU + 1) * s2
        return mp.log(t_pdf(r, SIGMA2, NU) * by_quad(lambda t: t_pdf(t, sc, NU + 1), mu))
    f_in, f_out = NU1 * norm_pdf(r, SIGMA2 / NU2), (1 - NU1) * norm_pdf(r, SIGMA2)
    sel_in = by_quad(lambda t: norm_pdf(t, s2 / NU2), mu)
    sel_out = by_quad(lambda t: norm_pdf(t, s2), mu)
    return mp.log(f_in * sel_in + f_out * sel_out)


def main():
    print("PHI_1_959964 =", mp.nstr(by_quad(lambda t: norm_pdf(t, 1), mp.mpf("1.959964")), 20))
    print("T6_AT_1_5 =", mp.nstr(by_quad(lambda t: t_pdf(t, 1, 6), mp.mpf("1.5")), 20))
    for fam in ("normal", "t", "cn"):
        print(fam, [mp.nstr(unit(i, fam), 20) for i in range(3)])


if __name__ == "__main__":
    main()
