import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from gevbhm.dataset import GridSpec
from gevbhm.errors import DataError
from gevbhm.gev import GevParams, return_level
from gevbhm.predict import (build_return_level_map, distance_to_nearest_site,
                            interpolate_parameters, p_label, period_to_p,
                            return_levels_at_station)
from gevbhm.state import FAMILIES


def test_degenerate_draws_give_single_level(small_draws):
    same = replace(small_draws, families={f: v.take(np.zeros(50, int))
                                          for f, v in small_draws.families.items()},
                   iterations=small_draws.iterations[:50])
    z = return_levels_at_station(same, 3, 0.05)
    p = {f: same.site_params()[f][0, 3] for f in FAMILIES}
    assert np.all(z == z[0])
    assert z[0] == pytest.approx(return_level(0.05, GevParams(p["mu"], p["kappa"], p["xi"])))


def test_bracket_zero_period_returns_location(small_draws):
    z = return_levels_at_station(small_draws, 0, -math.expm1(-1.0))
    assert np.allclose(z, small_draws.site_params()["mu"][:, 0], rtol=1e-12)
    sid = small_draws.site_ids[0]
    assert np.array_equal(return_levels_at_station(small_draws, sid, 0.1),
                          return_levels_at_station(small_draws, 0, 0.1))


def test_interpolation_at_observed_site_is_exact(small_draws, rng):
    s = 4
    got = interpolate_parameters(small_draws, small_draws.X[s], small_draws.coords[s], rng)
    sp = small_draws.site_params()
    for k, f in enumerate(FAMILIES):
        assert np.allclose(got[:, k], sp[f][:, s], atol=1e-6)


def test_interpolation_far_away_reverts_to_prior(small_draws, rng):
    x = small_draws.X[0]
    far = small_draws.coords[0] + 1e6
    got = interpolate_parameters(small_draws, x, far, rng)
    fd = small_draws.families["mu"]
    z = (got[:, 0] - fd.theta @ x) * np.sqrt(fd.alpha)
    assert stats.kstest(z, "norm").pvalue > 0.01


def test_interpolation_rejects_wrong_columns(small_draws, rng):
    with pytest.raises(DataError):
        interpolate_parameters(small_draws, np.ones(2), [0.0, 0.0], rng)


def test_map_on_observed_sites_matches_station_medians(small_draws, small_ds):
    n = small_ds.n_sites
    grid = GridSpec(tuple(f"g{i}" for i in range(n)), small_ds.lat, small_ds.lon,
                    small_ds.coords, small_ds.X, small_ds.covariate_names)
    m = build_return_level_map(small_draws, grid, 0.05, seed=1)
    for s in range(n):
        ref = np.median(return_levels_at_station(small_draws, s, 0.05))
        assert m.median[s] == pytest.approx(ref, rel=1e-6)


def test_map_properties(small_draws, small_ds):
    grid = small_ds.grid
    m = build_return_level_map(small_draws, grid, 0.05, seed=2)
    assert len(m) == len(grid)
    assert np.all(m.lower <= m.median) and np.all(m.median <= m.upper)
    again = build_return_level_map(small_draws, grid, 0.05, seed=2, threads=2)
    assert np.array_equal(m.median, again.median)
    assert np.array_equal(m.upper, again.upper)
    chunked = build_return_level_map(small_draws, grid, 0.05, seed=2, chunk=7, threads=2)
    assert np.allclose(m.median, chunked.median, rtol=1e-10)
    d = distance_to_nearest_site(small_draws, grid.coords)
    rho, p = stats.spearmanr(d, m.width)
    assert rho > 0 and p < 0.01


def test_per_draw_period_monotonicity(small_draws):
    for s in range(small_draws.X.shape[0]):
        z50 = return_levels_at_station(small_draws, s, 0.02)
        z20 = return_levels_at_station(small_draws, s, 0.05)
        assert np.all(z50 >= z20)


def test_labels():
    assert p_label(0.05) == "M20"
    assert p_label(period_to_p(50)) == "M50"
    with pytest.raises(ValueError):
        period_to_p(1.0)
