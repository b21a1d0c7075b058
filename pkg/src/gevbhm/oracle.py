"""Independent reference computations and the synthetic-data generator.

Nothing here reuses the numerical kernels it is meant to check: finite
differences call plain functions through numdifftools, the evidence integral is done by adaptive
quadrature with dense inverses, and Gaussian fields are drawn with numpy's
own Cholesky.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numdifftools as nd
import numpy as np
from scipy import integrate

from .errors import ConfigError, NumericalError


# --------------------------------------------------------------------------
# Finite differences
# --------------------------------------------------------------------------

MAX_FD_STEP = 0.5


def finite_difference(fn: Callable[[float], float], x: float, step: float | None = None,
                      scale: float | None = None, **options) -> tuple[float, float]:
    """Central-difference first and second derivatives of a scalar function.

    Uses numdifftools' central differences with Richardson extrapolation.
    By default the step is chosen adaptively, starting no larger than half
    the distance to zero, or than ``scale`` (the length over which ``fn`` is
    smooth, e.g. the distance to a support boundary) when that is smaller.
    A plain fixed-step stencil is not accurate enough for second derivatives
    that are small relative to the function value (rounding error alone is
    of order ``1e-16 |f| / h^2``). A fixed ``step`` is honoured when given. Extra keyword arguments go to
    ``numdifftools.Derivative``.
    """
    x = float(x)
    if step is None:
        width = max(abs(x), 0.1) if scale is None else min(max(abs(x), 0.1), float(scale))
        step = nd.MaxStepGenerator(base_step=MAX_FD_STEP * width)
    opts = {"method": "central", "step": step, **options}
    with warnings.catch_warnings():
        # numdifftools warns about all-NaN step tables; reported below instead
        warnings.simplefilter("ignore", RuntimeWarning)
        warnings.simplefilter("ignore", UserWarning)
        first = float(nd.Derivative(fn, n=1, **opts)(x))
        second = float(nd.Derivative(fn, n=2, **opts)(x))
    if not (math.isfinite(first) and math.isfinite(second)):
        raise NumericalError(f"non-finite finite-difference derivative at x={x}")
    return first, second


def relative_error(value: float, reference: float, floor: float = 1e-6) -> float:
    return abs(value - reference) / max(abs(reference), floor)


# --------------------------------------------------------------------------
# Model evidence
# --------------------------------------------------------------------------

def gaussian_marginal_log_evidence(upsilon, X, mask, K, theta0, cov0) -> float:
    """``log N(upsilon; X_M theta0_M, K + X_M C0_M X_M')`` with dense algebra."""
    mask = np.asarray(mask, dtype=bool)
    xm = np.asarray(X)[:, mask]
    c0 = np.asarray(cov0)[np.ix_(mask, mask)]
    S = np.asarray(K) + xm @ c0 @ xm.T
    r = np.asarray(upsilon) - xm @ np.asarray(theta0)[mask]
    sign, logdet = np.linalg.slogdet(S)
    if sign <= 0:
        raise NumericalError("marginal covariance is not positive definite")
    quad = float(r @ np.linalg.inv(S) @ r)
    return -0.5 * (r.size * math.log(2 * math.pi) + logdet + quad)


def quadrature_model_evidence(upsilon, X, mask, K, theta0, cov0,
                              epsabs: float = 0.0, epsrel: float = 1e-11) -> float:
    """Log of ``int N(upsilon; X_M t, K) N(t; theta0_M, C0_M) dt`` by adaptive cubature.

    The integrand is shifted to the posterior mode and scaled by the
    posterior Cholesky factor so that the integration box ``[-12, 12]^d``
    carries essentially all the mass. The integrand itself is evaluated
    from the two dense Gaussian log-densities.
    """
    mask = np.asarray(mask, dtype=bool)
    d = int(mask.sum())
    if d > 3:
        raise ValueError("quadrature is limited to at most 3 included coefficients")
    xm = np.asarray(X)[:, mask]
    y = np.asarray(upsilon, dtype=float)
    t0 = np.asarray(theta0, dtype=float)[mask]
    c0 = np.asarray(cov0, dtype=float)[np.ix_(mask, mask)]
    kinv = np.linalg.inv(np.asarray(K, dtype=float))
    c0inv = np.linalg.inv(c0)
    _, ldk = np.linalg.slogdet(K)
    _, ldc = np.linalg.slogdet(c0)
    prec = xm.T @ kinv @ xm + c0inv
    cov = np.linalg.inv(prec)
    mode = cov @ (xm.T @ kinv @ y + c0inv @ t0)
    L = np.linalg.cholesky(cov)
    n = y.size

    def log_integrand(t):
        # t has shape (m, d): one coefficient vector per row
        r = y[None, :] - t @ xm.T
        u = t - t0
        return (-0.5 * (n * math.log(2 * math.pi) + ldk + np.einsum("ij,jk,ik->i", r, kinv, r))
                - 0.5 * (d * math.log(2 * math.pi) + ldc
                         + np.einsum("ij,jk,ik->i", u, c0inv, u)))

    shift = float(log_integrand(mode[None, :])[0])

    def f(u):
        return np.exp(log_integrand(mode[None, :] + u @ L.T) - shift)

    res = integrate.cubature(f, [-12.0] * d, [12.0] * d, rtol=epsrel, atol=epsabs)
    val, err = float(res.estimate), float(res.error)
    if res.status != "converged" or not (val > 0 and math.isfinite(val)) or err > 1e-6 * val:
        raise NumericalError(f"quadrature did not converge (value {val}, error {err})")
    return shift + math.log(val) + float(np.sum(np.log(np.diag(L))))


def enumerate_models(ncol: int) -> list[np.ndarray]:
    """Every inclusion mask with the constant switched on."""
    out = []
    for bits in itertools.product((False, True), repeat=ncol - 1):
        out.append(np.array((True,) + bits))
    return out


def model_posterior(upsilon, X, K, theta0, cov0) -> tuple[list[np.ndarray], np.ndarray]:
    """Exact posterior over all models under a flat model prior."""
    models = enumerate_models(np.asarray(X).shape[1])
    logs = np.array([gaussian_marginal_log_evidence(upsilon, X, m, K, theta0, cov0)
                     for m in models])
    w = np.exp(logs - logs.max())
    return models, w / w.sum()


# --------------------------------------------------------------------------
# Gaussian surrogate closed forms
# --------------------------------------------------------------------------

def gaussian_site_posterior(y: np.ndarray, prior_mean: float, prior_var: float,
                            noise_sd: float) -> tuple[float, float]:
    """Conjugate normal posterior of a location given N(loc, noise_sd^2) data."""
    y = np.asarray(y, dtype=float)
    prec = 1.0 / prior_var + y.size / noise_sd ** 2
    mean = (prior_mean / prior_var + y.sum() / noise_sd ** 2) / prec
    return mean, 1.0 / prec


# --------------------------------------------------------------------------
# Synthetic data
# --------------------------------------------------------------------------

def simulate_gp_fields(coords: np.ndarray, alpha: float, lam: float, n_rep: int,
                       rng: np.random.Generator) -> np.ndarray:
    """``n_rep`` joint draws (rows) of a zero-mean exponential-covariance field."""
    c = np.asarray(coords, dtype=float)
    d = np.sqrt(((c[:, None, :] - c[None, :, :]) ** 2).sum(-1))
    cov = np.exp(-d / lam) / alpha
    L = np.linalg.cholesky(cov + 1e-10 / alpha * np.eye(len(c)))
    return rng.standard_normal((n_rep, len(c))) @ L.T


@dataclass(frozen=True)
class FamilyTruth:
    theta: tuple
    alpha: float
    lam: float


def _default_truth() -> dict[str, FamilyTruth]:
    return {
        "mu": FamilyTruth((8.0, 0.3, -0.2, 1.2), 2.0, 1.0),
        "kappa": FamilyTruth((0.45, 0.0, 0.0, 0.0), 400.0, 1.5),
        "xi": FamilyTruth((0.1, 0.0, 0.0, 0.0), 1000.0, 2.0),
    }


@dataclass(frozen=True)
class SyntheticSpec:
    """Benchmark layout and ground truth.

    Stations sit on a random subset of a regular lat/lon grid of cells.
    Covariates other than lat/lon are smooth random surfaces plus cell noise;
    ``theta`` entries follow ``("const",) + covariates`` on the standardized
    scale.
    """

    n_sites: int = 40
    n_years: int = 30
    first_year: int = 1991
    irregular: bool = False
    min_years: int = 10
    grid_shape: tuple = (15, 15)
    lat_range: tuple = (58.0, 64.0)
    lon_range: tuple = (5.0, 12.0)
    covariates: tuple = ("lat", "lon", "MSP")
    truth: dict = field(default_factory=_default_truth)
    zero_variance: bool = False
    unit_km: float = 100.0
    covariate_noise: float = 0.5
    seed: int = 0

    def __post_init__(self):
        ncell = self.grid_shape[0] * self.grid_shape[1]
        if not (1 <= self.n_sites <= ncell):
            raise ConfigError("n_sites must be between 1 and the number of grid cells")
        for f, t in self.truth.items():
            if len(t.theta) != len(self.covariates) + 1:
                raise ConfigError(f"truth for {f} needs {len(self.covariates) + 1} coefficients")


@dataclass
class SyntheticTruth:
    station_params: np.ndarray
    cell_params: np.ndarray
    station_tau: np.ndarray
    cell_tau: np.ndarray
    spec: SyntheticSpec

    def station(self, i: int):
        from .gev import GevParams

        return GevParams(*self.station_params[i])


def _covariate_surfaces(spec, lat, lon, rng):
    cells = {}
    pts = np.column_stack([lat, lon])
    for name in spec.covariates:
        if name in ("lat", "lon"):
            continue
        smooth = simulate_gp_fields(pts, 1.0, 3.0, 1, rng)[0]
        cells[name] = 10.0 + smooth + spec.covariate_noise * rng.standard_normal(lat.size)
    return cells


def generate_synthetic(spec: SyntheticSpec | None = None):
    """Simulate a dataset from the full hierarchy.

    Returns ``(dataset, truth, raw)`` where ``raw`` holds the exact inputs
    (series, station lat/lon, cell table) used to build the dataset; the file
    writers serialize ``raw`` so that reloading reproduces it bit for bit.
    """
    from .dataset import Projection, build_dataset
    from .gev import AnnualSeries, _ppf_py
    from .regression import Standardization

    spec = spec or SyntheticSpec()
    rng = np.random.default_rng(spec.seed)
    nr, nc = spec.grid_shape
    glat = np.linspace(*spec.lat_range, nr)
    glon = np.linspace(*spec.lon_range, nc)
    lat = np.repeat(glat, nc)
    lon = np.tile(glon, nr)
    ncell = lat.size
    cell_ids = [f"c{i:05d}" for i in range(ncell)]
    cells = {"cell_id": cell_ids, "lat": lat, "lon": lon}
    cells.update(_covariate_surfaces(spec, lat, lon, rng))

    st = np.sort(rng.choice(ncell, size=spec.n_sites, replace=False))
    raw_cols = []
    for name in spec.covariates:
        raw_cols.append(lat if name == "lat" else lon if name == "lon" else cells[name])
    raw = np.column_stack(raw_cols) if raw_cols else np.zeros((ncell, 0))
    std = Standardization.fit(spec.covariates, raw[st])
    Xc = std.apply(raw)
    proj = Projection("equirectangular", float(np.mean(lat[st])), float(np.mean(lon[st])),
                      spec.unit_km)
    coords = proj.project(lat, lon)

    from .state import FAMILIES

    params = np.zeros((ncell, 3))
    taus = np.zeros((ncell, 3))
    for attempt in range(100):
        for k, f in enumerate(FAMILIES):
            t = spec.truth[f]
            tau = (np.zeros(ncell) if spec.zero_variance
                   else simulate_gp_fields(coords, t.alpha, t.lam, 1, rng)[0])
            taus[:, k] = tau
            params[:, k] = Xc @ np.asarray(t.theta, dtype=float) + tau
        if np.all(params[:, 1] > 0):
            break
    else:
        raise ConfigError("inverse-scale field stayed non-positive after 100 retries; "
                          "raise the kappa intercept or its field precision")

    series = []
    for i, c in enumerate(st):
        if spec.irregular:
            n = int(rng.integers(spec.min_years, spec.n_years + 1))
            years = np.sort(rng.choice(np.arange(spec.first_year, spec.first_year + spec.n_years),
                                       size=n, replace=False))
        else:
            years = np.arange(spec.first_year, spec.first_year + spec.n_years)
        vals = []
        mu, ka, xi = params[c]
        for _ in years:
            v = -1.0
            while not v > 0:
                v = _ppf_py(rng.uniform(1e-12, 1.0 - 1e-12), mu, ka, xi)
            vals.append(float(v))
        series.append(AnnualSeries(f"S{i + 1:03d}", tuple(int(y) for y in years), tuple(vals)))

    raw_inputs = {"series": series, "lat": lat[st].copy(), "lon": lon[st].copy(), "cells": cells}
    ds = build_dataset(series, raw_inputs["lat"], raw_inputs["lon"], cells, spec.covariates,
                       "equirectangular", spec.unit_km)
    truth = SyntheticTruth(params[st].copy(), params.copy(), taus[st].copy(), taus.copy(), spec)
    return ds, truth, raw_inputs
