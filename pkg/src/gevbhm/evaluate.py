"""Scoring rules, leave-one-out cross-validation, madogram, MLE baseline, prior sweep."""

from __future__ import annotations

import logging
import math
import traceback
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .dataset import Dataset
from .gev import DEFAULT_RETURN_PERIODS, MleFit, fit_point, gev_cdf_ufunc, gev_logpdf, gev_ppf, \
    mle_fit, return_levels
from .parallel import parallel_map
from .predict import interpolate_parameters
from .sampler import SamplerConfig, run_chain
from .spatial import distances
from .state import FAMILIES

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# Scores
# --------------------------------------------------------------------------

def crps_from_samples(ensemble: Sequence[float], y_obs: float) -> float:
    """Ensemble CRPS ``mean|X - y| - 0.5 mean|X - X'|`` over all m^2 ordered pairs."""
    x = np.sort(np.asarray(ensemble, dtype=float).ravel())
    m = x.size
    if m == 0:
        raise ValueError("empty ensemble")
    # sum_{i,j} |x_i - x_j| = 2 sum_i (2i - m - 1) x_(i) for sorted x (1-based i)
    w = 2.0 * np.arange(1, m + 1) - m - 1.0
    spread = 2.0 * float(w @ x) / (m * m)
    return float(np.mean(np.abs(x - y_obs))) - 0.5 * spread


def crps_many(ensemble: Sequence[float], y_obs: Sequence[float]) -> np.ndarray:
    """CRPS of one ensemble against several observations."""
    x = np.sort(np.asarray(ensemble, dtype=float).ravel())
    m = x.size
    if m == 0:
        raise ValueError("empty ensemble")
    w = 2.0 * np.arange(1, m + 1) - m - 1.0
    spread = 2.0 * float(w @ x) / (m * m)
    csum = np.concatenate([[0.0], np.cumsum(x)])
    y = np.asarray(y_obs, dtype=float)
    k = np.searchsorted(x, y)
    # sum |x - y| split at the insertion point
    absdev = (k * y - csum[k]) + (csum[m] - csum[k] - (m - k) * y)
    return absdev / m - 0.5 * spread


def predictive_log_score(param_draws: np.ndarray, y_obs: float) -> float:
    """``-log`` of the posterior-mixture density at ``y_obs``.

    ``param_draws`` has shape (R, 3). Draws whose support excludes ``y_obs``
    contribute zero density.
    """
    p = np.atleast_2d(np.asarray(param_draws, dtype=float))
    if p.shape[0] == 0:
        raise ValueError("no parameter draws")
    ld = gev_logpdf(float(y_obs), p[:, 0], p[:, 1], p[:, 2])
    top = np.max(ld)
    if not np.isfinite(top):
        warnings.warn(f"observation {y_obs} lies outside the support of every draw", stacklevel=2)
        return math.inf
    return -(top + math.log(np.mean(np.exp(ld - top))))


def gaussian_crps(y: float, mean: float = 0.0, sd: float = 1.0) -> float:
    """Closed-form CRPS of a normal predictive distribution."""
    from scipy.stats import norm

    z = (y - mean) / sd
    return sd * (z * (2 * norm.cdf(z) - 1) + 2 * norm.pdf(z) - 1 / math.sqrt(math.pi))


# --------------------------------------------------------------------------
# Leave-one-out cross-validation
# --------------------------------------------------------------------------

@dataclass
class FoldResult:
    scenario: str
    site: int
    station_id: str
    crps: np.ndarray | None = None
    ls: np.ndarray | None = None
    rl_median: dict = field(default_factory=dict)
    xi_values: np.ndarray | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class ScenarioScores:
    scenario: str
    folds: list[FoldResult]
    pooled: bool = False

    @property
    def succeeded(self) -> list[FoldResult]:
        return [f for f in self.folds if f.ok]

    @property
    def failed(self) -> list[FoldResult]:
        return [f for f in self.folds if not f.ok]

    def site_crps(self) -> np.ndarray:
        return np.array([f.crps.mean() for f in self.succeeded])

    def site_ls(self) -> np.ndarray:
        return np.array([f.ls.mean() for f in self.succeeded])

    @property
    def mean_crps(self) -> float:
        ok = self.succeeded
        if not ok:
            return math.nan
        if self.pooled:
            return float(np.mean(np.concatenate([f.crps for f in ok])))
        return float(np.mean(self.site_crps()))

    @property
    def mean_ls(self) -> float:
        ok = self.succeeded
        if not ok:
            return math.nan
        if self.pooled:
            return float(np.mean(np.concatenate([f.ls for f in ok])))
        return float(np.mean(self.site_ls()))


@dataclass
class CvReport:
    scenarios: dict[str, ScenarioScores]

    def table(self) -> list[dict]:
        """Rows with columns Scenario, CRPS, LS, Folds, Failed."""
        return [{"Scenario": k, "CRPS": v.mean_crps, "LS": v.mean_ls,
                 "Folds": len(v.succeeded), "Failed": len(v.failed)}
                for k, v in self.scenarios.items()]


def _fold_task(args) -> FoldResult:
    dataset, config, scenario, i, periods, every = args
    sid = dataset.station_ids[i]
    try:
        cfg = replace(config, scenario=scenario)
        train = dataset.without(i)
        draws = run_chain(train, cfg, np.random.SeedSequence([config.seed, i]))
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, i, 1]))
        params = interpolate_parameters(draws, dataset.X[i], dataset.coords[i], rng, every)
        u = rng.uniform(size=params.shape[0])
        ens = gev_ppf(u, params[:, 0], params[:, 1], params[:, 2])
        y = dataset.series[i].array
        crps = crps_many(ens, y)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ls = np.array([predictive_log_score(params, v) for v in y])
        rl = {float(T): float(np.median(return_levels(1.0 / T, params[:, 0], params[:, 1],
                                                       params[:, 2]))) for T in periods}
        return FoldResult(scenario, i, sid, crps, ls, rl, params[:, 2].copy())
    except Exception as exc:  # a failed fold is reported, never dropped
        log.error("fold %s/%s failed: %s", scenario, sid, exc)
        return FoldResult(scenario, i, sid, error=f"{type(exc).__name__}: {exc}\n"
                                                  + traceback.format_exc(limit=3))


def leave_one_out_cv(dataset: Dataset, config: SamplerConfig,
                     scenarios: Sequence[str] = ("BMA", "Fixed", "Full", "NoCovar"),
                     threads: int = 1, folds: Sequence[int] | None = None, pooled: bool = False,
                     return_periods: Sequence[float] = (20.0,), every: int = 1) -> CvReport:
    """Hold out each station in turn, refit, and score the held-out years.

    The fold chain seed derives from ``(seed, fold)`` and is shared by all
    scenarios, so scenario differences are not confounded with seed noise.
    Training folds keep the full-data covariate standardization.
    """
    if dataset.n_sites < 2:
        raise ValueError("cross-validation needs at least 2 stations")
    folds = list(range(dataset.n_sites)) if folds is None else list(folds)
    tasks = [(dataset, config, s, i, tuple(return_periods), every)
             for s in scenarios for i in folds]
    results = parallel_map(_fold_task, tasks, threads)
    out = {}
    for s in scenarios:
        out[s] = ScenarioScores(s, [r for r in results if r.scenario == s], pooled)
    return CvReport(out)


# --------------------------------------------------------------------------
# Madogram
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MadogramPoint:
    i: int
    j: int
    distance: float
    value: float
    n_shared: int


def _margins(dataset: Dataset, kind: str) -> list[dict[int, float]]:
    out = []
    for s in dataset.series:
        y = s.array
        if kind == "empirical":
            u = rankdata(y) / (y.size + 1.0)
        elif kind == "mle":
            p, _ = fit_point(y)
            u = gev_cdf_ufunc(y, p.mu, p.kappa, p.xi)
        else:
            raise ValueError(f"unknown margins {kind!r}; use 'empirical' or 'mle'")
        out.append(dict(zip(s.years, u)))
    return out


def madogram(dataset: Dataset, margins: str = "empirical",
             min_shared_years: int = 10) -> list[MadogramPoint]:
    """F-madogram ``0.5 * mean|F_i(y_i) - F_j(y_j)|`` for station pairs with enough shared years."""
    if dataset.n_sites < 2:
        raise ValueError("madogram needs at least 2 stations")
    F = _margins(dataset, margins)
    D = distances(dataset.coords)
    pts = []
    for i in range(dataset.n_sites):
        for j in range(i + 1, dataset.n_sites):
            shared = sorted(set(F[i]) & set(F[j]))
            if len(shared) < min_shared_years:
                continue
            a = np.array([F[i][t] for t in shared])
            b = np.array([F[j][t] for t in shared])
            pts.append(MadogramPoint(i, j, float(D[i, j]), 0.5 * float(np.mean(np.abs(a - b))),
                                     len(shared)))
    if not pts:
        warnings.warn(f"no station pair shares {min_shared_years} or more years", stacklevel=2)
    return pts


# --------------------------------------------------------------------------
# Bootstrap MLE baseline
# --------------------------------------------------------------------------

def _mle_task(args):
    values, B, periods, level, seed, i = args
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return mle_fit(values, B, periods, level,
                       np.random.default_rng(np.random.SeedSequence([seed, i])))


def bootstrap_mle_baseline(dataset: Dataset, return_periods=DEFAULT_RETURN_PERIODS,
                           bootstrap_B: int = 1000, level: float = 0.90, seed: int = 0,
                           threads: int = 1, sites: Sequence[int] | None = None) -> list[MleFit]:
    """Per-station local MLE with bootstrap return-level bands."""
    sites = range(dataset.n_sites) if sites is None else sites
    tasks = [(dataset.series[i].array, bootstrap_B, tuple(return_periods), level, seed, i)
             for i in sites]
    return parallel_map(_mle_task, tasks, threads)


# --------------------------------------------------------------------------
# Prior sensitivity
# --------------------------------------------------------------------------

HYPER_NAMES = ("a_alpha", "b_alpha", "a_lambda", "b_lambda")
FACTORS = {"halved": 0.5, "doubled": 2.0}


@dataclass
class SensitivityRow:
    label: str
    family: str | None
    parameter: str | None
    change: str | None
    alpha_median: dict
    lambda_median: dict
    return_curve: dict


def sweep_configs(config: SamplerConfig, families=FAMILIES, parameters=HYPER_NAMES,
                  changes=("halved", "doubled")) -> list[tuple[str, str | None, str | None,
                                                                str | None, SamplerConfig]]:
    out = [("Base", None, None, None, config)]
    for f in families:
        for name in parameters:
            for ch in changes:
                pri = dict(config.priors)
                pri[f] = pri[f].scaled(name, FACTORS[ch])
                out.append((f"{f}:{name}:{ch}", f, name, ch, replace(config, priors=pri)))
    return out


def _sweep_task(args):
    label, fam, name, ch, cfg, dataset, station, periods = args
    draws = run_chain(dataset, cfg)
    am = {f: float(np.median(draws.families[f].alpha)) for f in FAMILIES}
    lm = {f: float(np.median(draws.families[f].lam)) for f in FAMILIES}
    curve = {}
    if station is not None:
        from .predict import return_levels_at_station

        curve = {float(T): float(np.median(return_levels_at_station(draws, station, 1.0 / T)))
                 for T in periods}
    return SensitivityRow(label, fam, name, ch, am, lm, curve)


def prior_sensitivity_sweep(dataset: Dataset, config: SamplerConfig, families=FAMILIES,
                            parameters=HYPER_NAMES, changes=("halved", "doubled"),
                            station: int | None = 0,
                            return_periods=DEFAULT_RETURN_PERIODS,
                            threads: int = 1) -> list[SensitivityRow]:
    """Base run plus every single hyperparameter halved or doubled.

    All runs share the seed, so differences reflect the prior change rather
    than Monte Carlo noise.
    """
    tasks = [(label, f, n, ch, cfg, dataset, station, tuple(return_periods))
             for label, f, n, ch, cfg in sweep_configs(config, families, parameters, changes)]
    return parallel_map(_sweep_task, tasks, threads)
