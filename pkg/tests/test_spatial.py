import math

import numpy as np
import pytest

from gevbhm.errors import NumericalError
from gevbhm.spatial import (GpHyper, SiteSet, backward_nb, cholesky_nb, distances,
                            exp_cov_matrix, forward_nb, gp_conditional, krige_moments,
                            loo_conditionals, spd_factorize)


def _sites(n, rng):
    return SiteSet(tuple(f"s{i}" for i in range(n)), rng.uniform(0, 5, (n, 2)))


def test_site_set_validation():
    with pytest.raises(ValueError):
        SiteSet(("a", "a"), [[0, 0], [1, 1]])
    with pytest.raises(ValueError):
        SiteSet(("a",), [[0, np.nan]])
    with pytest.raises(ValueError):
        GpHyper(0.0, 1.0)
    with pytest.raises(ValueError):
        GpHyper(1.0, -1.0)


def test_covariance_entries(rng):
    s = _sites(5, rng)
    K = exp_cov_matrix(s, GpHyper(2.0, 1.5))
    d = distances(s.coords)
    assert np.allclose(np.diag(K), 0.5)
    assert K[0, 3] == pytest.approx(math.exp(-d[0, 3] / 1.5) / 2.0)
    assert np.allclose(K, K.T)


def test_factor_logdet_solve_inverse(rng):
    s = _sites(8, rng)
    K = exp_cov_matrix(s, GpHyper(3.0, 2.0))
    f = spd_factorize(K)
    assert f.jitter == 0.0
    assert f.logdet == pytest.approx(np.linalg.slogdet(K)[1], rel=1e-12)
    b = rng.normal(size=8)
    assert np.allclose(f.solve(b), np.linalg.solve(K, b))
    assert f.quad(b) == pytest.approx(b @ np.linalg.solve(K, b), rel=1e-12)
    assert np.allclose(f.inverse @ K, np.eye(8), atol=1e-10)
    g = f.scaled(4.0)
    assert g.logdet == pytest.approx(np.linalg.slogdet(4 * K)[1], rel=1e-12)
    assert np.allclose(g.inverse, np.linalg.inv(4 * K))


def test_jitter_ladder_and_failure():
    a = np.ones((3, 3))
    f = spd_factorize(a)
    assert f.jitter > 0
    with pytest.raises(NumericalError, match="condition number"):
        spd_factorize(-np.eye(3))


def test_numba_triangular_helpers(rng):
    a = rng.normal(size=(6, 6))
    a = a @ a.T + 6 * np.eye(6)
    ok, L = cholesky_nb(a)
    assert ok
    assert np.allclose(L, np.linalg.cholesky(a))
    b = rng.normal(size=6)
    assert np.allclose(forward_nb(L, b), np.linalg.solve(L, b))
    assert np.allclose(backward_nb(L, b), np.linalg.solve(L.T, b))
    ok, _ = cholesky_nb(-np.eye(2))
    assert not ok


def test_gp_conditional_examples(rng):
    h = GpHyper(2.0, 1.0)
    given = SiteSet(("a",), [[0.0, 0.0]])
    same = SiteSet(("t",), [[0.0, 0.0]])
    m, c = gp_conditional(same, given, [0.7], h)
    assert m[0] == pytest.approx(0.7)
    assert c[0, 0] == pytest.approx(0.0, abs=1e-12)
    far = SiteSet(("t",), [[1e4, 0.0]])
    m, c = gp_conditional(far, given, [0.7], h)
    assert m[0] == pytest.approx(0.0, abs=1e-12)
    assert c[0, 0] == pytest.approx(0.5)


def test_krige_moments_match_dense(rng):
    h = GpHyper(1.7, 1.3)
    given, targets = _sites(7, rng), _sites(4, rng)
    tau = rng.normal(size=7)
    m, c = gp_conditional(targets, given, tau, h)
    corr = spd_factorize(np.exp(-distances(given.coords) / h.lam), scale=1.0)
    cross = np.exp(-distances(given.coords, targets.coords) / h.lam)
    m2, v2 = krige_moments(corr, cross, tau, h.alpha)
    assert np.allclose(m, m2)
    assert np.allclose(np.diag(c), v2)


def test_loo_conditionals_match_direct_conditioning(rng):
    h = GpHyper(2.5, 1.1)
    s = _sites(6, rng)
    K = exp_cov_matrix(s, h)
    tau = rng.normal(size=6)
    mean, var = loo_conditionals(np.linalg.inv(K), tau)
    for i in range(6):
        rest = [j for j in range(6) if j != i]
        w = np.linalg.solve(K[np.ix_(rest, rest)], K[rest, i])
        assert mean[i] == pytest.approx(w @ tau[rest], rel=1e-9, abs=1e-12)
        assert var[i] == pytest.approx(K[i, i] - K[i, rest] @ w, rel=1e-9)
