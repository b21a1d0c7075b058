import numpy as np
import pytest

from gevbhm.oracle import enumerate_models, gaussian_marginal_log_evidence
from gevbhm.regression import (CovariateMatrix, RegressionPrior, Standardization, constant_only,
                               log_model_score, propose_neighbor_model, theta_full_conditional,
                               update_model_and_theta)
from gevbhm.spatial import distances, spd_factorize
from gevbhm.state import FamilyState


def _instance(rng, n=6, p=2, alpha=2.0, lam=1.0):
    coords = rng.uniform(0, 3, (n, 2))
    corr = spd_factorize(np.exp(-distances(coords) / lam), scale=1.0)
    X = np.column_stack([np.ones(n), rng.normal(size=(n, p))])
    ups = X @ np.r_[1.0, 0.8, np.zeros(p - 1)] + rng.normal(0, 0.3, n)
    return X, ups, corr, alpha


def test_standardization_round_trip(rng):
    raw = rng.normal(5, 2, (10, 2))
    st = Standardization.fit(("a", "b"), raw)
    X = st.apply(raw)
    assert np.allclose(X[:, 0], 1)
    assert np.allclose(X[:, 1:].mean(0), 0)
    assert np.allclose(X[:, 1:].std(0), 1)
    again = Standardization.from_dict(st.to_dict())
    assert np.array_equal(again.apply(raw), X)
    with pytest.raises(ValueError):
        Standardization.fit(("a",), np.ones((4, 1)))


def test_covariate_matrix_checks():
    with pytest.raises(ValueError):
        CovariateMatrix(np.zeros((3, 2)), ("const", "a"))
    assert CovariateMatrix(np.ones((3, 2)), ("const", "a")).p == 1


def test_score_matches_dense_marginal(rng):
    X, ups, corr, alpha = _instance(rng)
    K = corr.scaled(1 / alpha)
    prior = RegressionPrior.isotropic(3, 0.5, 1.5)
    for m in enumerate_models(3):
        got = log_model_score(m, ups, X, K, prior)
        dense = corr.chol @ corr.chol.T / alpha
        ref = gaussian_marginal_log_evidence(ups, X, m, dense, prior.theta0, prior.cov)
        assert got == pytest.approx(ref, rel=1e-10, abs=1e-10)


def test_inert_covariate_score_is_finite(rng):
    X, ups, corr, alpha = _instance(rng)
    X[:, 2] = 0.0
    K = corr.scaled(1 / alpha)
    prior = RegressionPrior.isotropic(3)
    a = log_model_score(np.array([True, True, False]), ups, X, K, prior)
    b = log_model_score(np.array([True, True, True]), ups, X, K, prior)
    assert np.isfinite(a - b)
    assert a == pytest.approx(b, abs=1e-10)


def test_theta_conditional_matches_dense(rng):
    X, ups, corr, alpha = _instance(rng)
    K = corr.scaled(1 / alpha)
    Kd = corr.chol @ corr.chol.T / alpha
    prior = RegressionPrior.isotropic(3, 0.5, 2.0)
    mask = np.array([True, False, True])
    cond = theta_full_conditional(ups, X, mask, K, prior)
    xm = X[:, mask]
    prec = xm.T @ np.linalg.solve(Kd, xm) + np.eye(2) / 4.0
    mean = np.linalg.solve(prec, xm.T @ np.linalg.solve(Kd, ups) + np.array([0.5, 0]) / 4.0)
    assert np.allclose(cond.precision, prec)
    assert np.allclose(cond.mean, mean)
    th = cond.draw(rng)
    assert th[1] == 0.0


def test_neighbor_proposal_flips_one_allowed_bit(rng):
    mask = constant_only(4)
    allowed = np.array([False, True, False, True])
    seen = set()
    for _ in range(200):
        new = propose_neighbor_model(mask, rng, allowed)
        diff = np.flatnonzero(new != mask)
        assert diff.size == 1 and diff[0] in (1, 3)
        seen.add(int(diff[0]))
    assert seen == {1, 3}
    with pytest.raises(ValueError):
        propose_neighbor_model(mask, rng, np.zeros(4, dtype=bool))


def test_update_keeps_linear_predictor(rng):
    X, ups, corr, alpha = _instance(rng, n=8)
    theta = np.zeros(3)
    theta[0] = 1.0
    fixed = X @ theta
    fam = FamilyState("mu", theta, constant_only(3), ups - fixed, ups.copy(), fixed, alpha, 1.0,
                      corr)
    prior = RegressionPrior.isotropic(3)
    before = fam.upsilon.copy()
    for _ in range(50):
        res = update_model_and_theta(fam, X, prior, rng)
        assert res in (True, False)
        assert np.array_equal(fam.upsilon, before)
        assert fam.consistency_error(X) < 1e-12
        assert np.all(fam.theta[~fam.mask] == 0)
    assert update_model_and_theta(fam, X, prior, rng, move=False) is None
