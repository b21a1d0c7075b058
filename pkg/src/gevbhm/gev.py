"""GEV distribution in the (location, inverse scale, shape) parameterization.

Density for ``h(y) = 1 + xi * kappa * (y - mu) > 0``::

    f(y) = kappa * h^{-(1 + 1/xi)} * exp(-h^{-1/xi})

Every scalar kernel is written once in plain Python and compiled twice: as a
numba ``njit`` function (used inside the MCMC site sweep) and as a numpy ufunc
(used by the public array API). For ``|xi| < XI_EPS`` the Gumbel limit is used.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit, vectorize
from scipy import optimize

from .errors import DataError

XI_EPS = 1e-8

_SIG4 = ["float64(float64, float64, float64, float64)"]


# --------------------------------------------------------------------------
# Scalar kernels
# --------------------------------------------------------------------------

def _logpdf_py(y, mu, kappa, xi):
    z = kappa * (y - mu)
    if abs(xi) < XI_EPS:
        return math.log(kappa) - z - math.exp(-z)
    t = xi * z
    if t <= -1.0:
        return -math.inf
    lh = math.log1p(t)
    return math.log(kappa) - (1.0 + 1.0 / xi) * lh - math.exp(-lh / xi)


def _cdf_py(y, mu, kappa, xi):
    z = kappa * (y - mu)
    if abs(xi) < XI_EPS:
        return math.exp(-math.exp(-z))
    t = xi * z
    if t <= -1.0:
        return 0.0 if xi > 0.0 else 1.0
    return math.exp(-math.exp(-math.log1p(t) / xi))


def _ppf_py(u, mu, kappa, xi):
    # u-quantile; -log(u) is the standard Gumbel/Frechet argument
    if not (u > 0.0 and u < 1.0):
        return math.nan
    w = -math.log(u)
    if abs(xi) < XI_EPS:
        return mu - math.log(w) / kappa
    return mu + math.expm1(-xi * math.log(w)) / (kappa * xi)


def _dmu_py(y, mu, kappa, xi):
    eps = y - mu
    if abs(xi) < XI_EPS:
        e = math.exp(-kappa * eps)
        return kappa - kappa * e, -kappa * kappa * e
    t = xi * kappa * eps
    if t <= -1.0:
        return math.nan, math.nan
    lh = math.log1p(t)
    h = 1.0 + t
    p1 = math.exp(-(1.0 / xi + 1.0) * lh)
    p2 = math.exp(-(1.0 / xi + 2.0) * lh)
    first = (xi + 1.0) * kappa / h - kappa * p1
    second = xi * (xi + 1.0) * kappa * kappa / (h * h) - (xi + 1.0) * kappa * kappa * p2
    return first, second


def _dkappa_py(y, mu, kappa, xi):
    eps = y - mu
    if abs(xi) < XI_EPS:
        e = math.exp(-kappa * eps)
        return 1.0 / kappa - eps + eps * e, -1.0 / (kappa * kappa) - eps * eps * e
    t = xi * kappa * eps
    if t <= -1.0:
        return math.nan, math.nan
    lh = math.log1p(t)
    h = 1.0 + t
    p1 = math.exp(-(1.0 / xi + 1.0) * lh)
    p2 = math.exp(-(1.0 / xi + 2.0) * lh)
    first = 1.0 / kappa - (xi + 1.0) * eps / h + eps * p1
    second = (-1.0 / (kappa * kappa) + (xi + 1.0) * xi * eps * eps / (h * h)
              - eps * eps * (xi + 1.0) * p2)
    return first, second


def _xi_terms_py(y, mu, kappa, xi):
    """(f1, f2, f1dot, f2dot, g1, g2, g3, g4) of the shape-derivative expansion."""
    eps = y - mu
    t = xi * kappa * eps
    lh = math.log1p(t)
    h = 1.0 + t
    a = kappa * eps / h
    xi2 = xi * xi
    xi3 = xi2 * xi
    f1 = (xi + 1.0) / xi * lh
    f2 = math.exp(-lh / xi)
    f1dot = -lh / xi2 + (xi + 1.0) / xi * a
    f2dot = f2 * (lh / xi2 - a / xi)
    g1 = -2.0 * lh / xi3 + a / xi2
    g2 = -a / xi2 - (xi + 1.0) / xi * a * a
    g3 = f2dot * (lh / xi2) + f2 * (-2.0 * lh / xi3 + a / xi2)
    g4 = f2dot * (a / xi) - f2 * (a / xi2 + a * a / xi)
    return f1, f2, f1dot, f2dot, g1, g2, g3, g4


def _dxi_py(y, mu, kappa, xi):
    if abs(xi) < XI_EPS or xi * kappa * (y - mu) <= -1.0:
        return math.nan, math.nan
    f1, f2, f1dot, f2dot, g1, g2, g3, g4 = _xi_terms_nb(y, mu, kappa, xi)
    return -f1dot - f2dot, g1 - g2 - g3 + g4


def _fused_py(fam, y, mu, kappa, xi):
    """(log f, d/dp log f, d2/dp2 log f) for p = mu, kappa or xi (fam 0, 1, 2).

    Shares one log1p and one exp between the density and its derivatives.
    Returns ``ok=False`` when the derivative is unavailable (shape in the
    Gumbel regime) and ``ll=-inf`` off the support.
    """
    eps = y - mu
    z = kappa * eps
    if abs(xi) < XI_EPS:
        e = math.exp(-z)
        ll = math.log(kappa) - z - e
        if fam == 0:
            return ll, kappa - kappa * e, -kappa * kappa * e, True
        if fam == 1:
            return ll, 1.0 / kappa - eps + eps * e, -1.0 / (kappa * kappa) - eps * eps * e, True
        return ll, 0.0, 0.0, False
    t = xi * z
    if t <= -1.0:
        return -math.inf, 0.0, 0.0, False
    lh = math.log1p(t)
    h = 1.0 + t
    p = math.exp(-lh / xi)
    ll = math.log(kappa) - (1.0 + 1.0 / xi) * lh - p
    if fam == 0:
        ph = p / h
        first = (xi + 1.0) * kappa / h - kappa * ph
        second = (xi + 1.0) * kappa * kappa * (xi - p) / (h * h)
        return ll, first, second, True
    if fam == 1:
        ph = p / h
        first = 1.0 / kappa - (xi + 1.0) * eps / h + eps * ph
        second = -1.0 / (kappa * kappa) + (xi + 1.0) * eps * eps * (xi - p) / (h * h)
        return ll, first, second, True
    a = z / h
    xi2 = xi * xi
    xi3 = xi2 * xi
    f1dot = -lh / xi2 + (xi + 1.0) / xi * a
    f2dot = p * (lh / xi2 - a / xi)
    g1 = -2.0 * lh / xi3 + a / xi2
    g2 = -a / xi2 - (xi + 1.0) / xi * a * a
    g3 = f2dot * (lh / xi2) + p * (-2.0 * lh / xi3 + a / xi2)
    g4 = f2dot * (a / xi) - p * (a / xi2 + a * a / xi)
    return ll, -f1dot - f2dot, g1 - g2 - g3 + g4, True


logpdf_nb = njit(cache=True)(_logpdf_py)
cdf_nb = njit(cache=True)(_cdf_py)
ppf_nb = njit(cache=True)(_ppf_py)
dmu_nb = njit(cache=True)(_dmu_py)
dkappa_nb = njit(cache=True)(_dkappa_py)
_xi_terms_nb = njit(cache=True)(_xi_terms_py)
dxi_nb = njit(cache=True)(_dxi_py)
fused_nb = njit(cache=True)(_fused_py)

gev_logpdf = vectorize(_SIG4, cache=True)(_logpdf_py)
gev_logpdf.__doc__ = "Vectorized GEV log-density (ufunc): gev_logpdf(y, mu, kappa, xi)."
gev_cdf_ufunc = vectorize(_SIG4, cache=True)(_cdf_py)
gev_ppf = vectorize(_SIG4, cache=True)(_ppf_py)
gev_ppf.__doc__ = "Vectorized GEV quantile function (ufunc): gev_ppf(u, mu, kappa, xi)."


# --------------------------------------------------------------------------
# Domain types
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GevParams:
    """GEV parameters at one site: location, inverse scale and shape."""

    mu: float
    kappa: float
    xi: float

    def __post_init__(self):
        for name in ("mu", "kappa", "xi"):
            object.__setattr__(self, name, float(getattr(self, name)))
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"GevParams.{name} must be finite")
        if self.kappa <= 0:
            raise ValueError(f"GevParams.kappa must be > 0, got {self.kappa}")

    @property
    def scale(self) -> float:
        return 1.0 / self.kappa

    def mean(self) -> float:
        """Analytic mean (infinite for xi >= 1)."""
        if self.xi >= 1:
            return math.inf
        if abs(self.xi) < XI_EPS:
            return self.mu + np.euler_gamma / self.kappa
        return self.mu + (math.gamma(1.0 - self.xi) - 1.0) / (self.kappa * self.xi)


@dataclass(frozen=True)
class AnnualSeries:
    """Annual maxima at one station."""

    station_id: str
    years: tuple[int, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.years) != len(self.values):
            raise DataError(f"station {self.station_id}: years and values differ in length")
        if len(self.years) < 1:
            raise DataError(f"station {self.station_id}: empty series")
        if len(set(self.years)) != len(self.years):
            raise DataError(f"station {self.station_id}: duplicate years")
        for v in self.values:
            if not (math.isfinite(v) and v > 0):
                raise DataError(f"station {self.station_id}: annual maxima must be finite and > 0")

    def __len__(self):
        return len(self.values)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


# --------------------------------------------------------------------------
# Public scalar API
# --------------------------------------------------------------------------

def log_density(y: float, p: GevParams) -> float:
    """Log-density at ``y``; ``-inf`` outside the support."""
    return logpdf_nb(float(y), p.mu, p.kappa, p.xi)


def gev_cdf(y: float, p: GevParams) -> float:
    return cdf_nb(float(y), p.mu, p.kappa, p.xi)


def _check_unit(x: float, name: str) -> None:
    if not (0.0 < x < 1.0):
        raise ValueError(f"{name} must lie in (0, 1), got {x}")


def return_level(p_exceed: float, params: GevParams) -> float:
    """Level exceeded with probability ``p_exceed`` in one year (period ``1/p_exceed``)."""
    _check_unit(p_exceed, "p_exceed")
    # 1 - p computed as a quantile of the CDF; -log(1-p) via log1p for small p
    w = -math.log1p(-p_exceed)
    mu, kappa, xi = params.mu, params.kappa, params.xi
    if abs(xi) < XI_EPS:
        return mu - math.log(w) / kappa
    return mu + math.expm1(-xi * math.log(w)) / (kappa * xi)


def sample(params: GevParams, u: float) -> float:
    """Inverse-CDF draw: the ``u``-quantile."""
    _check_unit(u, "u")
    return ppf_nb(float(u), params.mu, params.kappa, params.xi)


def return_levels(p_exceed, mu, kappa, xi) -> np.ndarray:
    """Vectorized return levels over arrays of parameters (e.g. posterior draws)."""
    p = np.asarray(p_exceed, dtype=float)
    if np.any((p <= 0) | (p >= 1)):
        raise ValueError("p_exceed must lie in (0, 1)")
    w = -np.log1p(-p)
    mu, kappa, xi = np.broadcast_arrays(np.asarray(mu, float), np.asarray(kappa, float),
                                        np.asarray(xi, float))
    gumbel = np.abs(xi) < XI_EPS
    safe_xi = np.where(gumbel, 1.0, xi)
    with np.errstate(divide="ignore", invalid="ignore"):
        gev = mu + np.expm1(-safe_xi * np.log(w)) / (kappa * safe_xi)
    return np.where(gumbel, mu - np.log(w) / kappa, gev)


def _check_support(y: float, p: GevParams) -> None:
    if abs(p.xi) >= XI_EPS and 1.0 + p.xi * p.kappa * (y - p.mu) <= 0.0:
        raise ValueError(f"y={y} lies outside the support of {p}")


def dloglik_mu(y: float, p: GevParams) -> tuple[float, float]:
    """First and second derivative of the log-density in the location."""
    _check_support(y, p)
    return dmu_nb(float(y), p.mu, p.kappa, p.xi)


def dloglik_kappa(y: float, p: GevParams) -> tuple[float, float]:
    """First and second derivative of the log-density in the inverse scale."""
    _check_support(y, p)
    return dkappa_nb(float(y), p.mu, p.kappa, p.xi)


def dloglik_xi(y: float, p: GevParams) -> tuple[float, float]:
    """First and second derivative of the log-density in the shape.

    Undefined in the Gumbel regime ``|xi| < XI_EPS``, where the expansion
    divides by ``xi``.
    """
    if abs(p.xi) < XI_EPS:
        raise ValueError(f"shape derivatives undefined for |xi| < {XI_EPS}")
    _check_support(y, p)
    return dxi_nb(float(y), p.mu, p.kappa, p.xi)


def xi_derivative_terms(y: float, p: GevParams) -> dict[str, float]:
    """Intermediate quantities of the shape derivative, for componentwise checks.

    ``first = -f1dot - f2dot``, ``second = g1 - g2 - g3 + g4``, and
    ``d(-f1dot)/dxi = g1 - g2``, ``d(-f2dot)/dxi = -g3 + g4``.
    """
    if abs(p.xi) < XI_EPS:
        raise ValueError(f"shape derivatives undefined for |xi| < {XI_EPS}")
    _check_support(y, p)
    names = ("f1", "f2", "f1dot", "f2dot", "g1", "g2", "g3", "g4")
    return dict(zip(names, _xi_terms_nb(float(y), p.mu, p.kappa, p.xi)))


# --------------------------------------------------------------------------
# Maximum likelihood with bootstrap bands
# --------------------------------------------------------------------------

DEFAULT_RETURN_PERIODS = (2.0, 5.0, 10.0, 20.0, 50.0, 100.0)


@dataclass
class MleFit:
    params: GevParams
    loglik: float
    converged: bool
    message: str
    n_evaluations: int
    return_periods: np.ndarray
    return_levels: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    n_bootstrap: int
    n_bootstrap_failed: int = 0
    diagnostics: dict = field(default_factory=dict)


def _negloglik(z, y):
    mu, log_kappa, xi = z
    ll = gev_logpdf(y, mu, math.exp(log_kappa), xi).sum()
    return -ll if np.isfinite(ll) else np.inf


def _gumbel_start(y: np.ndarray) -> np.ndarray:
    sd = float(np.std(y, ddof=1))
    return np.array([float(np.mean(y)) - 0.45 * sd, math.log(1.283 / sd), 0.1])


def _optimize(y: np.ndarray, start: np.ndarray):
    opts = {"xatol": 1e-9, "fatol": 1e-11, "maxiter": 4000, "maxfev": 8000}
    res = optimize.minimize(_negloglik, start, args=(y,), method="Nelder-Mead", options=opts)
    # one restart from the optimum guards against premature simplex collapse
    res2 = optimize.minimize(_negloglik, res.x, args=(y,), method="Nelder-Mead", options=opts)
    res2.nfev += res.nfev
    return res2


def fit_point(values: Sequence[float]) -> tuple[GevParams, object]:
    """Point MLE without bootstrap; returns the params and the scipy result."""
    y = np.asarray(values, dtype=float)
    if np.ptp(y) == 0:
        raise DataError("degenerate series: all values are equal")
    res = _optimize(y, _gumbel_start(y))
    mu, log_kappa, xi = res.x
    return GevParams(float(mu), float(math.exp(log_kappa)), float(xi)), res


def mle_fit(series: AnnualSeries | Sequence[float], bootstrap_B: int = 1000,
            return_periods: Sequence[float] = DEFAULT_RETURN_PERIODS, level: float = 0.90,
            rng: np.random.Generator | None = None) -> MleFit:
    """Local maximum-likelihood fit with nonparametric bootstrap return-level bands.

    The likelihood is maximized by Nelder-Mead over ``(mu, log kappa, xi)``,
    started from Gumbel moment estimates. Bands are percentile intervals of
    the return levels over ``bootstrap_B`` resamples with replacement.
    """
    y = series.array if isinstance(series, AnnualSeries) else np.asarray(series, dtype=float)
    if y.size < 10:
        warnings.warn(f"series of length {y.size} is shorter than 10 years; MLE is unstable",
                      stacklevel=2)
    params, res = fit_point(y)
    periods = np.asarray(return_periods, dtype=float)
    p_exc = 1.0 / periods
    levels = return_levels(p_exc, params.mu, params.kappa, params.xi)

    rng = np.random.default_rng(0) if rng is None else rng
    boot = np.full((bootstrap_B, periods.size), np.nan)
    start = np.array([params.mu, math.log(params.kappa), params.xi])
    failed = 0
    idx = rng.integers(0, y.size, size=(bootstrap_B, y.size))
    for b in range(bootstrap_B):
        yb = y[idx[b]]
        if np.ptp(yb) == 0:
            failed += 1
            continue
        rb = optimize.minimize(_negloglik, start, args=(yb,), method="Nelder-Mead",
                               options={"xatol": 1e-7, "fatol": 1e-9, "maxiter": 4000})
        if not np.isfinite(rb.fun):
            failed += 1
            continue
        m, lk, x = rb.x
        boot[b] = return_levels(p_exc, m, math.exp(lk), x)
    ok = ~np.isnan(boot[:, 0])
    tail = (1.0 - level) / 2.0
    if ok.sum() >= 2:
        lower = np.quantile(boot[ok], tail, axis=0)
        upper = np.quantile(boot[ok], 1.0 - tail, axis=0)
    else:
        lower = upper = np.full(periods.size, np.nan)
    return MleFit(
        params=params, loglik=-float(res.fun), converged=bool(res.success),
        message=str(res.message), n_evaluations=int(res.nfev), return_periods=periods,
        return_levels=levels, lower=lower, upper=upper, level=level,
        n_bootstrap=bootstrap_B, n_bootstrap_failed=failed,
        diagnostics={"simplex_final": res.final_simplex[1].tolist()},
    )
