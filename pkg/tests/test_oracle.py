import math

import numpy as np
import pytest
from scipy import stats

from gevbhm.errors import ConfigError, NumericalError
from gevbhm.gev import GevParams, dloglik_xi, log_density
from gevbhm.oracle import (FamilyTruth, SyntheticSpec, enumerate_models, finite_difference,
                           gaussian_marginal_log_evidence, generate_synthetic,
                           quadrature_model_evidence, relative_error, simulate_gp_fields)
from gevbhm.spatial import SiteSet, GpHyper, exp_cov_matrix


def test_finite_difference_examples():
    d1, d2 = finite_difference(lambda x: x * x, 3.0)
    assert d1 == pytest.approx(6.0, rel=1e-10) and d2 == pytest.approx(2.0, rel=1e-10)
    d1, d2 = finite_difference(math.exp, 0.0)
    assert d1 == pytest.approx(1.0, rel=1e-10) and d2 == pytest.approx(1.0, rel=1e-9)
    with pytest.raises(NumericalError):
        finite_difference(lambda x: math.nan, 1.0)


def test_finite_difference_two_steps_agree():
    y, p = 13.0, GevParams(10.0, 0.5, 0.2)

    def f(t):
        return log_density(y, GevParams(p.mu, p.kappa, t))

    a = finite_difference(f, p.xi)
    b = finite_difference(f, p.xi, step=1e-4)
    ref = dloglik_xi(y, p)
    assert relative_error(a[0], ref[0]) < 1e-9
    assert relative_error(b[0], ref[0]) < 1e-6
    assert relative_error(a[1], b[1]) < 1e-4


def test_quadrature_one_site_closed_form():
    X = np.ones((1, 1))
    val = quadrature_model_evidence([0.7], X, [True], np.eye(1), [0.0], np.eye(1))
    assert val == pytest.approx(stats.norm(0, math.sqrt(2)).logpdf(0.7), rel=1e-10)


def test_quadrature_matches_dense_and_is_permutation_invariant(rng):
    n = 6
    coords = rng.uniform(0, 3, (n, 2))
    K = exp_cov_matrix(SiteSet(tuple(range(n)), coords), GpHyper(2.0, 1.0))
    X = np.column_stack([np.ones(n), rng.normal(size=(n, 2))])
    ups = rng.normal(size=n)
    t0, c0 = np.array([0.5, 0, 0]), np.eye(3) * 2.0
    mask = np.array([True, True, True])
    q = quadrature_model_evidence(ups, X, mask, K, t0, c0)
    g = gaussian_marginal_log_evidence(ups, X, mask, K, t0, c0)
    assert relative_error(q, g) < 1e-6
    perm = rng.permutation(n)
    qp = quadrature_model_evidence(ups[perm], X[perm], mask, K[np.ix_(perm, perm)], t0, c0)
    assert qp == pytest.approx(q, rel=1e-8)
    with pytest.raises(ValueError):
        quadrature_model_evidence(ups, np.ones((n, 4)), np.ones(4, bool), K, np.zeros(4),
                                  np.eye(4))


def test_enumerate_models():
    ms = enumerate_models(3)
    assert len(ms) == 4 and all(m[0] for m in ms)
    assert len({m.tobytes() for m in ms}) == 4


def test_gp_field_covariance_moments(rng):
    coords = rng.uniform(0, 2, (4, 2))
    K = exp_cov_matrix(SiteSet(tuple(range(4)), coords), GpHyper(1.5, 0.8))
    draws = simulate_gp_fields(coords, 1.5, 0.8, 10_000, rng)
    emp = np.cov(draws, rowvar=False, bias=True)
    # SE of a sample covariance of Gaussians: sqrt((K_ii K_jj + K_ij^2) / N)
    se = np.sqrt((np.outer(np.diag(K), np.diag(K)) + K ** 2) / draws.shape[0])
    assert np.all(np.abs(emp - K) < 3 * se)


def test_zero_variance_truth_is_linear():
    ds, truth, _ = generate_synthetic(SyntheticSpec(n_sites=10, n_years=5, grid_shape=(5, 5),
                                                    zero_variance=True, seed=2))
    for k, f in enumerate(("mu", "kappa", "xi")):
        theta = np.asarray(truth.spec.truth[f].theta)
        assert np.allclose(truth.station_params[:, k], ds.X @ theta, rtol=0, atol=1e-12)


def test_default_benchmark_and_reproducibility():
    spec = SyntheticSpec()
    assert spec.n_sites == 40 and spec.n_years == 30 and len(spec.covariates) == 3
    assert spec.truth["mu"].theta[0] == 8
    a = generate_synthetic(SyntheticSpec(n_sites=8, n_years=6, grid_shape=(5, 5), seed=4))
    b = generate_synthetic(SyntheticSpec(n_sites=8, n_years=6, grid_shape=(5, 5), seed=4))
    assert a[0].equals(b[0])
    assert np.all(a[1].station_params[:, 1] > 0)


def test_irregular_records():
    ds, _, _ = generate_synthetic(SyntheticSpec(n_sites=15, n_years=30, irregular=True,
                                                min_years=10, grid_shape=(5, 5), seed=1))
    lengths = [len(s) for s in ds.series]
    assert min(lengths) >= 10 and max(lengths) <= 30 and len(set(lengths)) > 1


def test_impossible_spec_is_rejected():
    truth = {"mu": FamilyTruth((8, 0, 0, 0), 2.0, 1.0),
             "kappa": FamilyTruth((-5.0, 0, 0, 0), 400.0, 1.0),
             "xi": FamilyTruth((0.1, 0, 0, 0), 1000.0, 1.0)}
    with pytest.raises(ConfigError, match="retries"):
        generate_synthetic(SyntheticSpec(n_sites=5, n_years=3, grid_shape=(4, 4), truth=truth))
    with pytest.raises(ConfigError):
        SyntheticSpec(truth={"mu": FamilyTruth((1.0,), 1.0, 1.0)})
