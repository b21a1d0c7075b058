import math
from dataclasses import replace

import numpy as np
import pytest

from gevbhm import evaluate
from gevbhm.dataset import build_dataset
from gevbhm.evaluate import (bootstrap_mle_baseline, crps_from_samples, crps_many, gaussian_crps,
                             leave_one_out_cv, madogram, predictive_log_score, sweep_configs)
from gevbhm.gev import AnnualSeries, GevParams, gev_ppf, log_density
from gevbhm.predict import interpolate_parameters
from gevbhm.sampler import SamplerConfig, run_chain

QUICK = SamplerConfig(iterations=400, burn_in=100, thin=3, seed=6)


def test_crps_examples(rng):
    assert crps_from_samples([2.0] * 5, 2.0) == 0.0
    assert crps_from_samples([0.0, 1.0], 0.5) == pytest.approx(0.25)
    x = rng.standard_normal(100_000)
    got = crps_from_samples(x, 0.0)
    assert gaussian_crps(0.0) == pytest.approx(0.2337, abs=1e-4)
    # MC error of the ensemble CRPS is well under 0.005 at this size
    assert abs(got - gaussian_crps(0.0)) < 0.005
    with pytest.raises(ValueError):
        crps_from_samples([], 1.0)


def test_crps_many_matches_pairwise(rng):
    ens = rng.normal(size=57)
    ys = np.r_[rng.normal(size=20), ens[:3], -10.0, 10.0]
    pair = np.abs(ens[:, None] - ens[None, :]).mean()
    for y, c in zip(ys, crps_many(ens, ys)):
        ref = np.abs(ens - y).mean() - 0.5 * pair
        assert c == pytest.approx(ref, abs=1e-12)
        assert c == pytest.approx(crps_from_samples(ens, y), abs=1e-12)


def test_log_score():
    p = GevParams(10, 0.5, 0.1)
    one = np.array([[p.mu, p.kappa, p.xi]])
    assert predictive_log_score(one, 12.0) == pytest.approx(-log_density(12.0, p), rel=1e-14)
    assert predictive_log_score(np.repeat(one, 9, 0), 12.0) == pytest.approx(
        -log_density(12.0, p), rel=1e-12)
    q = GevParams(14, 0.3, -0.1)
    two = np.array([[p.mu, p.kappa, p.xi], [q.mu, q.kappa, q.xi]])
    mix = 0.5 * (math.exp(log_density(15.0, p)) + math.exp(log_density(15.0, q)))
    assert predictive_log_score(two, 15.0) == pytest.approx(-math.log(mix), rel=1e-12)
    with pytest.warns(UserWarning):
        assert predictive_log_score(np.array([[0.0, 1.0, 0.5]]), -10.0) == math.inf


def _identical_pair():
    y = tuple(float(v) for v in gev_ppf(np.linspace(0.05, 0.95, 20), 10.0, 0.5, 0.1))
    years = tuple(range(2000, 2020))
    series = [AnnualSeries("A", years, y), AnnualSeries("B", years, y)]
    cells = {"cell_id": ["c0"], "lat": [60.0], "lon": [10.0]}
    return build_dataset(series, [60.0, 60.0], [10.0, 10.0], cells, ())


def test_two_station_toy_dominates_offset_predictive():
    ds = _identical_pair()
    rep = leave_one_out_cv(ds, QUICK, ["BMA"], folds=[0])
    fold = rep.scenarios["BMA"].folds[0]
    assert fold.ok, fold.error
    y = ds.series[0].array
    draws = run_chain(ds.without(0), QUICK)
    p = interpolate_parameters(draws, ds.X[0], ds.coords[0], np.random.default_rng(0))
    ens = gev_ppf(np.random.default_rng(1).uniform(size=len(p)), p[:, 0], p[:, 1], p[:, 2])
    assert fold.crps.mean() < crps_many(ens + 5.0, y).mean()


def test_cv_report_shape_and_seeds(small_ds):
    rep = leave_one_out_cv(small_ds, QUICK, ["BMA", "NoCovar"], folds=[0, 5])
    tab = rep.table()
    assert [r["Scenario"] for r in tab] == ["BMA", "NoCovar"]
    for r in tab:
        assert r["Folds"] == 2 and r["Failed"] == 0
        assert np.isfinite(r["CRPS"]) and np.isfinite(r["LS"])
    again = leave_one_out_cv(small_ds, QUICK, ["BMA"], folds=[5], threads=2)
    a = rep.scenarios["BMA"].folds[1]
    b = again.scenarios["BMA"].folds[0]
    assert np.array_equal(a.crps, b.crps)
    pooled = leave_one_out_cv(small_ds, QUICK, ["BMA"], folds=[0, 5], pooled=True)
    n = sum(len(small_ds.series[i]) for i in (0, 5))
    all_crps = np.concatenate([f.crps for f in pooled.scenarios["BMA"].folds])
    assert all_crps.size == n
    assert pooled.scenarios["BMA"].mean_crps == pytest.approx(all_crps.mean())


def test_failed_fold_is_recorded(small_ds, monkeypatch):
    real = evaluate.run_chain

    def flaky(ds, cfg, seed_seq=None, progress=None):
        if ds.n_sites == small_ds.n_sites - 1 and small_ds.station_ids[1] not in ds.station_ids:
            raise FloatingPointError("boom")
        return real(ds, cfg, seed_seq, progress)

    monkeypatch.setattr(evaluate, "run_chain", flaky)
    rep = leave_one_out_cv(small_ds, QUICK, ["BMA"], folds=[0, 1])
    sc = rep.scenarios["BMA"]
    assert len(sc.failed) == 1 and "boom" in sc.failed[0].error
    assert rep.table()[0]["Failed"] == 1


def test_madogram_identical_and_bounds(small_ds):
    ds = _identical_pair()
    pts = madogram(ds)
    assert len(pts) == 1 and pts[0].value == 0.0
    pts = madogram(small_ds)
    assert len(pts) == small_ds.n_sites * (small_ds.n_sites - 1) // 2
    assert all(0.0 <= p.value <= 0.5 for p in pts)
    assert all(0.0 <= p.value <= 0.5 for p in madogram(small_ds, "mle"))
    with pytest.warns(UserWarning):
        assert madogram(small_ds, min_shared_years=16) == []
    with pytest.raises(ValueError):
        madogram(small_ds, "ranks")


def test_bootstrap_band_contains_point(small_ds):
    fits = bootstrap_mle_baseline(small_ds, (5, 20), bootstrap_B=60, sites=[0, 1])
    for f in fits:
        assert np.all(f.lower <= f.return_levels) and np.all(f.return_levels <= f.upper)


def test_sweep_configs_round_trip():
    cfg = SamplerConfig(iterations=10, burn_in=0)
    rows = sweep_configs(cfg, families=("mu",), parameters=("b_lambda",))
    assert [r[0] for r in rows] == ["Base", "mu:b_lambda:halved", "mu:b_lambda:doubled"]
    halved = rows[1][-1]
    assert halved.priors["mu"].b_lambda == cfg.priors["mu"].b_lambda / 2
    back = replace(halved, priors={**halved.priors,
                                   "mu": halved.priors["mu"].scaled("b_lambda", 2.0)})
    assert back == cfg
