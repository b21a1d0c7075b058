"""Exponential-decay Gaussian process machinery.

Covariance ``K(s, s') = exp(-d(s, s') / lambda) / alpha``: ``alpha`` is a
precision scale (marginal variance ``1/alpha``), ``lambda`` the range in
distance units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from numba import njit
from scipy import linalg
from scipy.spatial.distance import cdist

from .errors import NumericalError

# relative jitter ladder applied to the diagonal on Cholesky failure
JITTER_LADDER = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


@dataclass(frozen=True)
class SiteSet:
    ids: tuple
    coords: np.ndarray

    def __post_init__(self):
        coords = np.atleast_2d(np.asarray(self.coords, dtype=float))
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "ids", tuple(self.ids))
        if coords.shape != (len(self.ids), 2):
            raise ValueError("coords must have shape (n_sites, 2)")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("site ids must be distinct")
        if not np.all(np.isfinite(coords)):
            raise ValueError("site coordinates must be finite")

    def __len__(self):
        return len(self.ids)


@dataclass(frozen=True)
class GpHyper:
    alpha: float
    lam: float

    def __post_init__(self):
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ValueError(f"lambda must be positive, got {self.lam}")


@njit(cache=True)
def cholesky_nb(a):
    """Lower Cholesky factor; ``(False, partial)`` if ``a`` is not positive definite."""
    n = a.shape[0]
    L = np.zeros_like(a)
    for j in range(n):
        s = a[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not s > 0.0:
            return False, L
        d = math.sqrt(s)
        L[j, j] = d
        for i in range(j + 1, n):
            t = a[i, j]
            for k in range(j):
                t -= L[i, k] * L[j, k]
            L[i, j] = t / d
    return True, L


@njit(cache=True)
def forward_nb(L, b):
    """Solve ``L x = b`` for lower-triangular ``L``."""
    n = b.size
    x = np.empty(n)
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * x[k]
        x[i] = s / L[i, i]
    return x


@njit(cache=True)
def backward_nb(L, b):
    """Solve ``L' x = b`` for lower-triangular ``L``."""
    n = b.size
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        s = b[i]
        for k in range(i + 1, n):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]
    return x


def distances(a: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    a = np.atleast_2d(a)
    d = cdist(a, a if b is None else np.atleast_2d(b))
    if not np.all(np.isfinite(d)):
        raise ValueError("non-finite distances")
    return d


def exp_correlation(d: np.ndarray, lam: float) -> np.ndarray:
    return np.exp(-np.asarray(d) / lam)


def exp_cov_matrix(sites: SiteSet, h: GpHyper) -> np.ndarray:
    """Covariance matrix of the field at ``sites`` (no jitter)."""
    return exp_correlation(distances(sites.coords), h.lam) / h.alpha


class SpdFactor:
    """Cholesky factor of a symmetric positive-definite matrix.

    Immutable after construction. ``jitter`` is the absolute amount that had
    to be added to the diagonal for the factorization to succeed.
    """

    def __init__(self, chol: np.ndarray, jitter: float = 0.0):
        self.chol = chol
        self.jitter = jitter

    @property
    def n(self) -> int:
        return self.chol.shape[0]

    @cached_property
    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    def solve(self, b: np.ndarray) -> np.ndarray:
        return linalg.cho_solve((self.chol, True), b, check_finite=False)

    def half_solve(self, b: np.ndarray) -> np.ndarray:
        """``L^{-1} b`` for the lower factor ``L``."""
        return linalg.solve_triangular(self.chol, b, lower=True, check_finite=False)

    def quad(self, b: np.ndarray) -> float:
        """``b' A^{-1} b``."""
        v = self.half_solve(b)
        return float(v @ v)

    @cached_property
    def inverse(self) -> np.ndarray:
        inv = self.solve(np.eye(self.n))
        return 0.5 * (inv + inv.T)

    def scaled(self, c: float) -> "SpdFactor":
        """Factor of ``c * A`` without refactorizing."""
        out = SpdFactor(self.chol * math.sqrt(c), self.jitter * c)
        if "inverse" in self.__dict__:
            out.__dict__["inverse"] = self.__dict__["inverse"] / c
        return out


def spd_factorize(a: np.ndarray, scale: float | None = None) -> SpdFactor:
    """Cholesky with an escalating diagonal jitter ladder.

    Jitter is relative to ``scale`` (default: mean of the diagonal).
    Raises NumericalError, including the condition number, if even the
    largest jitter fails.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    if scale is None:
        scale = float(np.mean(np.diag(a))) if a.size else 1.0
    for rel in JITTER_LADDER:
        jit = rel * scale
        try:
            m = a if jit == 0.0 else a + jit * np.eye(a.shape[0])
            chol = linalg.cholesky(m, lower=True, check_finite=False)
            if np.all(np.isfinite(chol)):
                return SpdFactor(chol, jit)
        except linalg.LinAlgError:
            continue
    try:
        cond = float(np.linalg.cond(a))
    except np.linalg.LinAlgError:
        cond = math.inf
    raise NumericalError(f"matrix not positive definite after maximum jitter "
                         f"(condition number {cond:.3e})")


def gp_conditional(targets: SiteSet, given: SiteSet, tau_given: Sequence[float],
                   h: GpHyper) -> tuple[np.ndarray, np.ndarray]:
    """Kriging: mean and covariance of the field at ``targets`` given ``given``.

    The leading variance term is the marginal variance ``1/alpha``.
    Negative diagonal entries produced by rounding are clipped to zero.
    """
    tau = np.asarray(tau_given, dtype=float)
    if len(given) == 0:
        raise ValueError("given site set is empty")
    if tau.shape != (len(given),):
        raise ValueError("tau_given must align with given sites")
    kgg = spd_factorize(exp_cov_matrix(given, h), scale=1.0 / h.alpha)
    ktg = exp_correlation(distances(targets.coords, given.coords), h.lam) / h.alpha
    ktt = exp_cov_matrix(targets, h)
    w = kgg.solve(ktg.T)
    mean = w.T @ tau
    cov = ktt - ktg @ w
    cov = 0.5 * (cov + cov.T)
    d = np.diag(cov).copy()
    np.fill_diagonal(cov, np.clip(d, 0.0, None))
    return mean, cov


def krige_moments(corr_factor: SpdFactor, cross_corr: np.ndarray, tau: np.ndarray,
                  alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Marginal kriging mean and variance for many targets at once.

    ``corr_factor`` factors the correlation matrix of the observed sites and
    ``cross_corr`` has shape (n_sites, n_targets). Only per-target marginal
    variances are formed, never the joint covariance across targets.
    """
    w = corr_factor.solve(cross_corr)
    mean = tau @ w
    var = (1.0 - np.einsum("ij,ij->j", cross_corr, w)) / alpha
    return mean, np.clip(var, 0.0, None)


def loo_conditionals(precision: np.ndarray, tau: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Leave-one-out conditional means and variances of every site.

    With ``Q = K^{-1}``: ``var_s = 1 / Q_ss`` and
    ``mean_s = tau_s - (Q tau)_s / Q_ss``, identical to conditioning on the
    remaining sites.
    """
    q = np.diag(precision)
    return tau - (precision @ tau) / q, 1.0 / q
