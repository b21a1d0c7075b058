import math

import numpy as np
import pytest
from scipy import integrate, optimize

from gevbhm import gev
from gevbhm.errors import DataError
from gevbhm.gev import (XI_EPS, AnnualSeries, GevParams, dloglik_kappa, dloglik_mu, dloglik_xi,
                        gev_cdf, log_density, mle_fit, return_level, return_levels, sample,
                        xi_derivative_terms)
from gevbhm.oracle import finite_difference, relative_error

P = GevParams(10.0, 0.5, 0.15)


def test_params_reject_bad_kappa():
    with pytest.raises(ValueError):
        GevParams(0.0, 0.0, 0.1)
    with pytest.raises(ValueError):
        GevParams(0.0, 1.0, math.nan)


def test_series_invariants():
    with pytest.raises(DataError):
        AnnualSeries("a", (2000, 2000), (1.0, 2.0))
    with pytest.raises(DataError):
        AnnualSeries("a", (2000,), (0.0,))
    with pytest.raises(DataError):
        AnnualSeries("a", (), ())
    assert len(AnnualSeries("a", (1, 2), (1.0, 2.0))) == 2


def test_log_density_examples():
    assert log_density(0.0, GevParams(0, 1, 0)) == pytest.approx(-1.0, abs=1e-15)
    assert log_density(-10.0, GevParams(0, 1, 0.5)) == -math.inf
    pdf = (gev_cdf(12 + 1e-5, P) - gev_cdf(12 - 1e-5, P)) / 2e-5
    assert relative_error(math.exp(log_density(12.0, P)), pdf) <= 1e-6


def test_cdf_limits_and_sampling_oracle():
    assert gev_cdf(10.0, GevParams(10, 3.0, 0.0)) == pytest.approx(math.exp(-1))
    assert gev_cdf(1e12, GevParams(0, 1, 0.2)) == 1.0
    assert gev_cdf(-1e3, GevParams(0, 1, 0.2)) == 0.0
    assert gev_cdf(1e3, GevParams(0, 1, -0.2)) == 1.0
    u = np.random.default_rng(0).uniform(size=1_000_000)
    draws = gev.gev_ppf(u, 10.0, 0.5, 0.15)
    frac = np.mean(draws < 14.0)
    p = gev_cdf(14.0, P)
    assert abs(frac - p) < 3 * math.sqrt(p * (1 - p) / u.size)
    m = P.mean()
    se = draws.std() / math.sqrt(draws.size)
    assert abs(draws.mean() - m) < 3 * se


def test_return_level_examples():
    assert return_level(-math.expm1(-1.0), GevParams(3.0, 2.0, 0.3)) == pytest.approx(3.0)
    z = return_level(0.05, GevParams(10, 0.5, 0.0))
    assert z == pytest.approx(15.940390, abs=1e-6)
    lo, hi = sorted(return_level(0.05, GevParams(10, 0.5, s)) for s in (-1e-6, 1e-6))
    assert lo <= z <= hi
    star = optimize.brentq(lambda t: gev_cdf(t, P) - 0.95, 10, 100, xtol=1e-14)
    assert return_level(0.05, P) == pytest.approx(star, rel=1e-12)
    assert sample(P, 0.95) == pytest.approx(return_level(0.05, P), rel=1e-14)
    assert sample(P, math.exp(-1)) == pytest.approx(10.0, rel=1e-14)
    for bad in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            return_level(bad, P)
        with pytest.raises(ValueError):
            sample(P, bad)


def test_vectorized_return_levels_match_scalar():
    mu = np.array([10.0, 8.0, 9.0])
    ka = np.array([0.5, 1.0, 0.7])
    xi = np.array([0.15, 0.0, -0.2])
    z = return_levels(0.02, mu, ka, xi)
    for k in range(3):
        assert z[k] == pytest.approx(return_level(0.02, GevParams(mu[k], ka[k], xi[k])), rel=1e-14)


def test_normalization_quadrature(rng):
    for _ in range(10):
        p = GevParams(rng.normal(10, 2), rng.uniform(0.2, 2), rng.uniform(-0.4, 0.5))
        end = p.mu - 1 / (p.kappa * p.xi)
        lo = end if p.xi > 0 else sample(p, 1e-15)
        hi = end if p.xi < 0 else sample(p, 1 - 1e-13)
        knots = [sample(p, u) for u in (0.01, 0.1, 0.5, 0.9, 0.99, 0.9999)]
        val, _ = integrate.quad(lambda t: math.exp(log_density(t, p)), lo, hi, epsabs=1e-13,
                                epsrel=1e-12, limit=500, points=knots)
        assert abs(val - 1.0) < 1e-6


def test_round_trip():
    for u in (0.001, 0.01, 0.1, 0.5, 0.9, 0.99, 0.999):
        for p in (P, GevParams(0, 2, 0.0), GevParams(5, 1, -0.3)):
            assert abs(gev_cdf(sample(p, u), p) - u) < 1e-10


def test_gumbel_continuity(rng):
    for _ in range(50):
        y, mu, ka = rng.normal(10, 2), rng.normal(10, 1), rng.uniform(0.3, 2)
        ref = log_density(y, GevParams(mu, ka, 0.0))
        for s in (1e-9, -1e-9):
            assert abs(log_density(y, GevParams(mu, ka, s)) - ref) < 1e-6


def test_kappa_derivative_exact_at_location():
    d1, d2 = dloglik_kappa(4.0, GevParams(4.0, 0.8, 0.15))
    assert d1 == pytest.approx(1 / 0.8, rel=1e-14)
    assert d2 == pytest.approx(-1 / 0.8 ** 2, rel=1e-14)


def _random_case(rng, xi_range=(-0.4, 0.5)):
    while True:
        p = GevParams(rng.normal(10, 2), rng.uniform(0.2, 2.0), rng.uniform(*xi_range))
        y = sample(p, rng.uniform(0.02, 0.98))
        if abs(p.xi) >= 0.02 or xi_range == (-0.4, 0.5):
            return y, p


@pytest.mark.parametrize("which", ["mu", "kappa", "xi"])
def test_derivatives_match_finite_differences(which, rng):
    fn = {"mu": dloglik_mu, "kappa": dloglik_kappa, "xi": dloglik_xi}[which]
    worst = 0.0
    for _ in range(100):
        y, p = _random_case(rng, (0.02, 0.5) if which == "xi" else (-0.4, 0.5))
        if which == "xi" and rng.random() < 0.5:
            p = GevParams(p.mu, p.kappa, -p.xi)
            y = sample(p, rng.uniform(0.02, 0.98))

        def f(t, p=p, y=y):
            q = dict(mu=p.mu, kappa=p.kappa, xi=p.xi)
            q[which] = t
            return log_density(y, GevParams(**q))

        ref1, ref2 = finite_difference(f, getattr(p, which))
        d1, d2 = fn(y, p)
        worst = max(worst, relative_error(d1, ref1), relative_error(d2, ref2))
    assert worst <= 1e-5


def test_mu_derivative_zero_at_optimum():
    y, p = 11.0, GevParams(10.0, 0.5, 0.15)
    res = optimize.minimize_scalar(lambda m: -log_density(y, GevParams(m, p.kappa, p.xi)),
                                   bracket=(9, 11), tol=1e-12)
    d1, _ = dloglik_mu(y, GevParams(res.x, p.kappa, p.xi))
    assert abs(d1) < 1e-7


def test_gumbel_regime_derivatives():
    p = GevParams(10.0, 0.5, XI_EPS)
    y = 12.3
    for fn, name in ((dloglik_mu, "mu"), (dloglik_kappa, "kappa")):
        def f(t):
            q = dict(mu=10.0, kappa=0.5, xi=0.0)
            q[name] = t
            return log_density(y, GevParams(**q))

        ref1, ref2 = finite_difference(f, getattr(p, name))
        d1, d2 = fn(y, p)
        assert relative_error(d1, ref1) <= 1e-5
        assert relative_error(d2, ref2) <= 1e-5
    with pytest.raises(ValueError):
        dloglik_xi(y, GevParams(10.0, 0.5, 0.0))


def test_xi_components_match_finite_differences():
    y, p = 13.0, GevParams(10.0, 0.5, 0.2)
    t = xi_derivative_terms(y, p)

    def part(name):
        return lambda s: xi_derivative_terms(y, GevParams(p.mu, p.kappa, s))[name]

    d_f1dot, _ = finite_difference(part("f1dot"), p.xi)
    d_f2dot, _ = finite_difference(part("f2dot"), p.xi)
    assert relative_error(-d_f1dot, t["g1"] - t["g2"]) <= 1e-5
    assert relative_error(-d_f2dot, -t["g3"] + t["g4"]) <= 1e-5
    d_f1, _ = finite_difference(part("f1"), p.xi)
    d_f2, _ = finite_difference(part("f2"), p.xi)
    assert relative_error(d_f1, t["f1dot"]) <= 1e-5
    assert relative_error(d_f2, t["f2dot"]) <= 1e-5


def test_derivatives_off_support_raise():
    with pytest.raises(ValueError):
        dloglik_mu(-10.0, GevParams(0, 1, 0.5))


def test_fused_kernel_matches_reference(rng):
    for _ in range(200):
        y, p = _random_case(rng, (0.02, 0.5))
        for k, fn in enumerate((dloglik_mu, dloglik_kappa, dloglik_xi)):
            ll, d1, d2, ok = gev.fused_nb(k, y, p.mu, p.kappa, p.xi)
            r1, r2 = fn(y, p)
            assert ok
            assert ll == pytest.approx(log_density(y, p), rel=1e-12, abs=1e-12)
            assert d1 == pytest.approx(r1, rel=1e-9, abs=1e-12)
            assert d2 == pytest.approx(r2, rel=1e-9, abs=1e-12)


def test_mle_recovers_large_sample():
    y = gev.gev_ppf(np.random.default_rng(5).uniform(size=5000), 10.0, 0.5, 0.15)
    fit = mle_fit(y, bootstrap_B=20)
    assert abs(fit.params.mu - 10) < 0.1
    assert abs(fit.params.kappa - 0.5) < 0.02
    assert abs(fit.params.xi - 0.15) < 0.05
    assert fit.converged
    assert np.all(fit.lower <= fit.upper)


def test_mle_degenerate_and_short():
    with pytest.raises(DataError):
        mle_fit([3.0] * 12, bootstrap_B=5)
    with pytest.warns(UserWarning):
        mle_fit([1.0, 2.0, 1.5, 3.0, 2.2], bootstrap_B=5)


def test_bootstrap_band_shrinks_with_length():
    widths = []
    for n in (20, 100, 1000):
        y = gev.gev_ppf(np.random.default_rng(n).uniform(size=n), 10.0, 0.5, 0.15)
        f = mle_fit(y, bootstrap_B=100, return_periods=(20,))
        widths.append(float(f.upper[0] - f.lower[0]))
    assert widths[0] > widths[1] > widths[2]
