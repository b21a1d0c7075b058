"""Linear models on the GEV parameters with Bayesian model averaging.

Inclusion models are boolean masks over the columns of the covariate matrix;
column 0 is the constant and is always included. Scores are conditional Bayes
factors: the regression coefficients are integrated out analytically given the
current linear predictor and the field covariance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit
from scipy import linalg

from .errors import NumericalError
from .spatial import SpdFactor, backward_nb, cholesky_nb, forward_nb
from .state import FamilyState

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Standardization:
    """Affine map taking raw covariates to mean 0 / sd 1 over observed sites."""

    names: tuple[str, ...]
    means: np.ndarray
    sds: np.ndarray

    @classmethod
    def fit(cls, names: Sequence[str], raw: np.ndarray) -> "Standardization":
        raw = np.asarray(raw, dtype=float)
        raw = raw.reshape(raw.shape[0] if raw.ndim else 1, len(names))
        sds = raw.std(axis=0)
        bad = [n for n, s in zip(names, sds) if not s > 0]
        if bad:
            raise ValueError(f"covariates constant over observed sites: {bad}")
        return cls(tuple(names), raw.mean(axis=0), sds)

    def apply(self, raw: np.ndarray) -> np.ndarray:
        """Design matrix with a leading constant column."""
        raw = np.asarray(raw, dtype=float)
        raw = raw.reshape(raw.shape[0] if raw.ndim > 1 else (1 if self.names else raw.size),
                          len(self.names))
        z = (raw - self.means) / self.sds
        return np.column_stack([np.ones(raw.shape[0]), z])

    def to_dict(self) -> dict:
        return {"names": list(self.names), "means": self.means.tolist(), "sds": self.sds.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardization":
        return cls(tuple(d["names"]), np.asarray(d["means"], float), np.asarray(d["sds"], float))


@dataclass(frozen=True)
class CovariateMatrix:
    X: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        if self.X.shape[1] != len(self.names):
            raise ValueError("column names do not match X")
        if not np.all(self.X[:, 0] == 1.0):
            raise ValueError("first column must be the constant")

    @property
    def p(self) -> int:
        """Number of non-constant covariates."""
        return self.X.shape[1] - 1


def constant_only(ncol: int) -> np.ndarray:
    m = np.zeros(ncol, dtype=bool)
    m[0] = True
    return m


@dataclass(frozen=True)
class RegressionPrior:
    """Gaussian prior on the full coefficient vector.

    ``cov`` is the prior covariance; a submodel's prior is the marginal over
    its included coefficients (rows/columns selected).
    """

    theta0: np.ndarray
    cov: np.ndarray

    @classmethod
    def isotropic(cls, ncol: int, intercept: float = 0.0, sd: float = 1.0) -> "RegressionPrior":
        theta0 = np.zeros(ncol)
        theta0[0] = intercept
        return cls(theta0, np.eye(ncol) * sd * sd)

    def submodel(self, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.theta0[mask], self.cov[np.ix_(mask, mask)]

    def sub_inverse(self, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
        """(theta0_M, C0_M^{-1}, log|C0_M|), memoized per mask."""
        cache = self.__dict__.setdefault("_inv_cache", {})
        key = np.asarray(mask, dtype=bool).tobytes()
        hit = cache.get(key)
        if hit is None:
            t0, c0 = self.submodel(mask)
            ch = np.linalg.cholesky(c0)
            inv = linalg.cho_solve((ch, True), np.eye(t0.size), check_finite=False)
            hit = (t0, inv, 2.0 * float(np.sum(np.log(np.diag(ch)))))
            cache[key] = hit
        return hit


@dataclass
class ThetaConditional:
    """Gaussian full conditional of the included coefficients."""

    mask: np.ndarray
    mean: np.ndarray
    precision: np.ndarray
    chol: np.ndarray

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        """Full-length coefficient vector; excluded entries are exactly zero."""
        z = rng.standard_normal(self.mean.size)
        sub = self.mean + backward_nb(self.chol, z)
        theta = np.zeros(self.mask.size)
        theta[self.mask] = sub
        return theta


def _gram(upsilon, X, Q):
    """Sufficient statistics ``X'QX``, ``X'Q upsilon`` and ``upsilon'Q upsilon``."""
    qx = Q @ X
    return X.T @ qx, qx.T @ upsilon, float(upsilon @ (Q @ upsilon))


@njit(cache=True)
def _submodel_nb(idx, A, b, c, t0, c0inv):
    m = idx.size
    prec = np.empty((m, m))
    at0 = np.zeros(m)
    bm = np.empty(m)
    for i in range(m):
        bm[i] = b[idx[i]]
        for j in range(m):
            aij = A[idx[i], idx[j]]
            prec[i, j] = aij + c0inv[i, j]
            at0[i] += aij * t0[j]
    ok, L = cholesky_nb(prec)
    rhs = bm + c0inv @ t0
    # residual r = upsilon - X_M t0 expressed through the Gram statistics
    rqr = c - 2.0 * (t0 @ bm) + t0 @ at0
    return ok, L, prec, rhs, rqr, bm - at0


@njit(cache=True)
def _score_nb(idx, A, b, c, t0, c0inv, c0_logdet, logdet_k, n):
    ok, L, _, _, rqr, xqr = _submodel_nb(idx, A, b, c, t0, c0inv)
    if not ok:
        return np.nan
    v = forward_nb(L, xqr)
    logdet = logdet_k + c0_logdet
    for i in range(idx.size):
        logdet += 2.0 * np.log(L[i, i])
    return -0.5 * (n * np.log(2.0 * np.pi) + logdet + rqr - v @ v)


def _args(mask, stats, prior):
    t0, c0_inv, c0_logdet = prior.sub_inverse(mask)
    return (np.flatnonzero(mask), *stats, t0, c0_inv), c0_logdet


def _score(mask, stats, prior, logdet_k, n):
    args, c0_logdet = _args(mask, stats, prior)
    out = _score_nb(*args, c0_logdet, float(logdet_k), float(n))
    if not math.isfinite(out):
        raise NumericalError("coefficient posterior precision is not positive definite")
    return out


def _conditional(mask, stats, prior):
    args, _ = _args(mask, stats, prior)
    ok, L, prec, rhs, _, _ = _submodel_nb(*args)
    if not ok:
        raise NumericalError("coefficient posterior precision is not positive definite")
    mean = backward_nb(L, forward_nb(L, rhs))
    return ThetaConditional(np.asarray(mask, dtype=bool), mean, prec, L)


def theta_full_conditional(upsilon: np.ndarray, X: np.ndarray, mask: np.ndarray,
                           K: SpdFactor, prior: RegressionPrior) -> ThetaConditional:
    """Posterior of the included coefficients given the linear predictor.

    precision = X_M' K^{-1} X_M + C0_M^{-1};
    mean = precision^{-1} (X_M' K^{-1} upsilon + C0_M^{-1} theta0_M).
    """
    mask = np.asarray(mask, dtype=bool)
    return _conditional(mask, _gram(upsilon, X, K.inverse), prior)


def log_model_score(mask: np.ndarray, upsilon: np.ndarray, X: np.ndarray, K: SpdFactor,
                    prior: RegressionPrior) -> float:
    """Log marginal likelihood of ``upsilon`` under inclusion model ``mask``.

    Exactly ``log N(upsilon; X_M theta0_M, K + X_M C0_M X_M')``, evaluated
    through the Woodbury identity so only |M| x |M| systems are factorized.
    The flat model prior adds a shared constant and is omitted.
    """
    mask = np.asarray(mask, dtype=bool)
    return _score(mask, _gram(upsilon, X, K.inverse), prior, K.logdet, upsilon.size)


def propose_neighbor_model(mask: np.ndarray, rng: np.random.Generator,
                           allowed: np.ndarray | None = None) -> np.ndarray:
    """Flip exactly one eligible non-constant inclusion bit, chosen uniformly."""
    mask = np.asarray(mask, dtype=bool)
    if allowed is None:
        allowed = ~constant_only(mask.size)
    idx = np.flatnonzero(allowed)
    idx = idx[idx != 0]
    if idx.size == 0:
        raise ValueError("no non-constant covariate available to flip")
    j = idx[rng.integers(idx.size)]
    out = mask.copy()
    out[j] = ~out[j]
    return out


def update_model_and_theta(fam: FamilyState, X: np.ndarray, prior: RegressionPrior,
                           rng: np.random.Generator, allowed: np.ndarray | None = None,
                           move: bool = True) -> bool | None:
    """Blocked (model, coefficients) update for one family.

    Step 1 proposes a neighbouring model and accepts it with the ratio of
    conditional marginal likelihoods; step 2 draws the coefficients from
    their full conditional. The field is then re-synchronized so that the
    linear predictor, and hence the GEV likelihood, is unchanged.

    Returns whether the model move was accepted, or None when no move was made.
    """
    K = fam.K
    stats = _gram(fam.upsilon, X, K.inverse)
    accepted = None
    if move:
        if allowed is None:
            allowed = ~constant_only(X.shape[1])
        proposal = propose_neighbor_model(fam.mask, rng, allowed)
        n = fam.upsilon.size
        log_ratio = (_score(proposal, stats, prior, K.logdet, n)
                     - _score(fam.mask, stats, prior, K.logdet, n))
        accepted = bool(math.log(rng.random()) < log_ratio)
        if accepted:
            fam.mask = proposal
    cond = _conditional(fam.mask, stats, prior)
    fam.theta = cond.draw(rng)
    fam.fixed = X @ fam.theta
    fam.tau = fam.upsilon - fam.fixed
    return accepted
