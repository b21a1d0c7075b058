"""MCMC engine.

Per iteration and per family (mu, kappa, xi):

1. blocked (model, coefficient) update with conditional Bayes factors;
2. one sweep over the sites in random order, updating each random effect by
   Metropolis-Hastings with a Gaussian proposal matched to the local
   curvature of the log full conditional (second-order Taylor expansion);
3. Gibbs update of the field precision ``alpha``;
4. Metropolis-Hastings update of the range ``lambda`` with a zero-truncated
   Taylor proposal.

The reverse move of every Taylor proposal is evaluated by re-expanding at the
proposed point, so the Hastings ratio is exact. Where the curvature is not
negative enough to define a proposal, a random walk is used instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np
from numba import njit
from scipy.special import log_ndtr, ndtr, ndtri

from .dataset import Dataset
from .errors import ConfigError, NumericalError
from .gev import fused_nb
from .regression import RegressionPrior, constant_only, update_model_and_theta
from .spatial import SpdFactor, cholesky_nb, distances, spd_factorize
from .state import FAMILIES, FamilyState

C_MIN = 1e-12
TAU_RW_SD = 0.1
LAMBDA_RW_SD = 0.3
UPDATES = ("model", "theta", "tau", "alpha", "lambda")
SCENARIOS = ("BMA", "Full", "NoCovar", "Fixed")


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FamilyPrior:
    """Gamma hyperpriors of one field plus the isotropic coefficient prior.

    ``alpha ~ Gamma(a_alpha/2, rate=b_alpha/2)``, ``lambda ~ Gamma(a_lambda, rate=b_lambda)``.
    """

    a_alpha: float
    b_alpha: float
    a_lambda: float
    b_lambda: float
    theta0_intercept: float = 0.0
    theta_sd: float = 1.0

    def scaled(self, name: str, factor: float) -> "FamilyPrior":
        return replace(self, **{name: getattr(self, name) * factor})


def default_priors() -> dict[str, FamilyPrior]:
    return {
        "mu": FamilyPrior(2.0, 6.0, 2.0, 2.0, theta0_intercept=8.0),
        "kappa": FamilyPrior(2.0, 2.0, 1.5, 1.5),
        "xi": FamilyPrior(2.0, 1.0, 2.0, 1.0),
    }


def parse_scenario(text: str) -> tuple[str, float | None]:
    """``BMA``, ``Full``, ``NoCovar``, ``Fixed`` or ``Fixed(0.2)`` / ``Fixed:0.2``."""
    t = text.strip()
    for prefix in ("FixedXi", "Fixed"):
        if t.startswith(prefix):
            rest = t[len(prefix):].strip("():= ")
            return "Fixed", (float(rest) if rest else None)
    if t not in SCENARIOS:
        raise ConfigError(f"unknown scenario {text!r}; expected one of {SCENARIOS}")
    return t, None


@dataclass(frozen=True)
class SamplerConfig:
    iterations: int = 200_000
    burn_in: int = 20_000
    thin: int = 10
    seed: int = 0
    scenario: str = "BMA"
    fixed_xi: float = 0.15
    priors: dict = field(default_factory=default_priors)
    # test-harness controls
    likelihood: str = "gev"
    surrogate_sd: float = 1.0
    skip: frozenset = frozenset()
    families: tuple = FAMILIES
    init: dict = field(default_factory=dict)

    def __post_init__(self):
        name, value = parse_scenario(self.scenario)
        object.__setattr__(self, "scenario", name)
        if value is not None:
            object.__setattr__(self, "fixed_xi", value)
        if not (0 <= self.burn_in < self.iterations):
            raise ConfigError("burn_in must satisfy 0 <= burn_in < iterations")
        if self.thin < 1:
            raise ConfigError("thin must be >= 1")
        if not math.isfinite(self.fixed_xi):
            raise ConfigError("fixed_xi must be finite")
        if self.likelihood not in ("gev", "gaussian"):
            raise ConfigError("likelihood must be 'gev' or 'gaussian'")
        unknown = set(self.skip) - set(UPDATES)
        if unknown:
            raise ConfigError(f"unknown update names in skip: {sorted(unknown)}")

    @property
    def n_records(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


# --------------------------------------------------------------------------
# Taylor proposal
# --------------------------------------------------------------------------

def taylor_gaussian_proposal(f_prime: float, f_second: float,
                             current: float) -> tuple[float, float] | None:
    """Gaussian proposal from a quadratic expansion of a log-density.

    With ``b = f' - f'' x`` and ``c = -f''`` returns ``(b/c, 1/c)``, or None
    when ``c <= C_MIN`` and the caller has to fall back to a random walk.
    """
    c = -f_second
    if not (c > C_MIN) or not math.isfinite(f_prime):
        return None
    b = f_prime - f_second * current
    return b / c, 1.0 / c


# --------------------------------------------------------------------------
# Random-effect sweep (compiled)
# --------------------------------------------------------------------------

@njit(cache=True)
def _site_terms(fam, kind, surr_sd, y, a, b, mu, kappa, xi):
    ll = 0.0
    d1 = 0.0
    d2 = 0.0
    if kind == 1:
        p = mu if fam == 0 else (kappa if fam == 1 else xi)
        inv = 1.0 / (surr_sd * surr_sd)
        for t in range(a, b):
            r = y[t] - p
            ll -= 0.5 * r * r * inv
            d1 += r * inv
            d2 -= inv
        return ll, d1, d2, True
    ok = True
    for t in range(a, b):
        v, g, h, good = fused_nb(fam, y[t], mu, kappa, xi)
        if v == -np.inf:
            return -np.inf, 0.0, 0.0, False
        ll += v
        d1 += g
        d2 += h
        ok = ok and good
    return ll, d1, d2, ok


@njit(cache=True)
def _sweep_kernel(fam, kind, surr_sd, y, starts, order, tau, fixed, ups, Q, z, logu, acc,
                  c_min, rw_sd):
    n = tau.size
    n_acc = 0
    for k in range(order.size):
        s = order[k]
        qss = Q[s, s]
        dot = 0.0
        for j in range(n):
            dot += Q[s, j] * tau[j]
        pvar = 1.0 / qss
        pmean = tau[s] - dot / qss
        cur = tau[s]
        a = starts[s]
        b = starts[s + 1]
        mu = ups[0, s]
        ka = ups[1, s]
        xi = ups[2, s]
        ll0, g0, h0, ok0 = _site_terms(fam, kind, surr_sd, y, a, b, mu, ka, xi)
        f1 = g0 - (cur - pmean) / pvar
        f2 = h0 - 1.0 / pvar
        c = -f2
        if ok0 and c > c_min:
            m = (f1 - f2 * cur) / c
            sd = 1.0 / math.sqrt(c)
            prop = m + sd * z[k]
            lq_f = -0.5 * z[k] * z[k] - math.log(sd)
        else:
            prop = cur + rw_sd * z[k]
            lq_f = -0.5 * z[k] * z[k] - math.log(rw_sd)
        newp = fixed[s] + prop
        if fam == 1 and newp <= 0.0:
            continue
        if fam == 0:
            mu = newp
        elif fam == 1:
            ka = newp
        else:
            xi = newp
        ll1, g1, h1, ok1 = _site_terms(fam, kind, surr_sd, y, a, b, mu, ka, xi)
        if ll1 == -np.inf:
            continue
        f1n = g1 - (prop - pmean) / pvar
        f2n = h1 - 1.0 / pvar
        cn = -f2n
        if ok1 and cn > c_min:
            mr = (f1n - f2n * prop) / cn
            sdr = 1.0 / math.sqrt(cn)
            lq_r = -0.5 * ((cur - mr) / sdr) ** 2 - math.log(sdr)
        else:
            lq_r = -0.5 * ((cur - prop) / rw_sd) ** 2 - math.log(rw_sd)
        lp0 = -0.5 * (cur - pmean) ** 2 / pvar
        lp1 = -0.5 * (prop - pmean) ** 2 / pvar
        logr = ll1 + lp1 + lq_r - ll0 - lp0 - lq_f
        if logu[k] < logr:
            tau[s] = prop
            ups[fam, s] = newp
            acc[s] += 1
            n_acc += 1
    return n_acc


# --------------------------------------------------------------------------
# Range parameter
# --------------------------------------------------------------------------

@njit(cache=True)
def _lambda_core(D, lam):
    n = D.shape[0]
    E = np.empty_like(D)
    edot = np.empty_like(D)
    eddot = np.empty_like(D)
    l2 = 1.0 / lam ** 2
    l3 = 2.0 / lam ** 3
    l4 = 1.0 / lam ** 4
    for i in range(n):
        for j in range(i + 1):
            d = D[i, j]
            e = math.exp(-d / lam)
            de = d * e
            E[i, j] = e
            E[j, i] = e
            edot[i, j] = de * l2
            edot[j, i] = de * l2
            v = de * (d * l4 - l3)
            eddot[i, j] = v
            eddot[j, i] = v
    ok, L = cholesky_nb(E)
    if not ok:
        return False, L, 0.0, E, edot, eddot, 0.0, 0.0
    # columns of L^{-1} by forward substitution on unit vectors
    linv = np.zeros_like(E)
    x = np.empty(n)
    logdet = 0.0
    for j in range(n):
        logdet += 2.0 * math.log(L[j, j])
        for i in range(j, n):
            s = 1.0 if i == j else 0.0
            for k in range(j, i):
                s -= L[i, k] * x[k]
            x[i] = s / L[i, i]
            linv[i, j] = x[i]
    einv = np.ascontiguousarray(linv.T) @ linv
    B = einv @ edot
    tr_b = 0.0
    tr_l = 0.0
    for i in range(n):
        for j in range(n):
            tr_b += einv[i, j] * edot[i, j]
            tr_l += einv[i, j] * eddot[i, j] - B[i, j] * B[j, i]
    return True, L, logdet, einv, edot, eddot, tr_b, tr_l


@njit(cache=True)
def _lambda_eval(einv, edot, eddot, logdet, tr_b, tr_l, lam, tau, alpha, a_lam, b_lam):
    av = einv @ tau
    ea = edot @ av
    w = einv @ ea
    quad = tau @ av
    logpost = -0.5 * alpha * quad - 0.5 * logdet + (a_lam - 1.0) * math.log(lam) - b_lam * lam
    f1 = 0.5 * alpha * (av @ ea) - 0.5 * tr_b - b_lam + (a_lam - 1.0) / lam
    tnt = 2.0 * (w @ ea) - av @ (eddot @ av)
    f2 = -0.5 * alpha * tnt - 0.5 * tr_l - (a_lam - 1.0) / lam ** 2
    return logpost, f1, f2


@dataclass
class LambdaTerms:
    """Log full conditional of lambda and its first two derivatives.

    The derivatives follow from ``dE/dl = D o E / l^2`` and
    ``M = d(E^-1)/dl = -E^-1 Edot E^-1``: with ``a = E^-1 tau``,
    ``B = E^-1 Edot`` and ``w = B a`` the quadratic forms reduce to
    ``tau' M tau = -a' Edot a``, ``tau' N tau = 2 w' Edot a - a' Eddot a`` and
    ``tr L = -tr(B B) + tr(E^-1 Eddot)``.
    """

    lam: float
    corr: SpdFactor
    edot: np.ndarray
    eddot: np.ndarray
    tr_b: float
    tr_l: float

    def evaluate(self, tau: np.ndarray, alpha: float, a_lam: float, b_lam: float):
        return _lambda_eval(self.corr.inverse, self.edot, self.eddot, self.corr.logdet,
                            self.tr_b, self.tr_l, self.lam, np.ascontiguousarray(tau, float),
                            float(alpha), float(a_lam), float(b_lam))


def lambda_terms(D: np.ndarray, lam: float, corr: SpdFactor | None = None) -> LambdaTerms:
    if corr is None:
        ok, L, logdet, einv, edot, eddot, tr_b, tr_l = _lambda_core(D, float(lam))
        if ok:
            corr = SpdFactor(L, 0.0)
            corr.__dict__["logdet"] = logdet
            corr.__dict__["inverse"] = 0.5 * (einv + einv.T)
            return LambdaTerms(lam, corr, edot, eddot, float(tr_b), float(tr_l))
        corr = spd_factorize(np.exp(-D / lam), scale=1.0)
    E = np.exp(-D / lam)
    einv = corr.inverse
    de = D * E
    edot = de / lam ** 2
    eddot = de * (D / lam ** 4 - 2.0 / lam ** 3)
    B = einv @ edot
    tr_b = float(np.sum(einv * edot))
    tr_l = -float(np.sum(B * B.T)) + float(np.sum(einv * eddot))
    return LambdaTerms(lam, corr, edot, eddot, tr_b, tr_l)


def lambda_log_posterior_derivatives(D, lam, tau, alpha, a_lam, b_lam):
    """(log posterior up to a constant, f', f'') of lambda at fixed tau, alpha."""
    return lambda_terms(D, lam).evaluate(np.asarray(tau, float), alpha, a_lam, b_lam)


def _truncnorm_draw(m: float, s: float, rng: np.random.Generator) -> float:
    a = -m / s
    u = rng.random()
    if a < 0.0:
        lo = ndtr(a)
        x = ndtri(lo + u * (1.0 - lo))
    else:
        x = -ndtri(u * ndtr(-a))
    return m + s * x


def _truncnorm_logpdf(x: float, m: float, s: float) -> float:
    return -0.5 * ((x - m) / s) ** 2 - math.log(s) - float(log_ndtr(m / s))


def _lambda_proposal(f1, f2, lam):
    prop = taylor_gaussian_proposal(f1, f2, lam)
    if prop is None:
        return None
    m, v = prop
    s = math.sqrt(v)
    if -m / s > 30.0:
        return None
    return m, s


def _lognormal_rw_logpdf(x, center):
    z = (math.log(x) - math.log(center)) / LAMBDA_RW_SD
    return -0.5 * z * z - math.log(LAMBDA_RW_SD) - math.log(x)


def update_lambda_mh(fam: FamilyState, D: np.ndarray, prior: FamilyPrior,
                     rng: np.random.Generator) -> bool:
    """One M-H step for the range with a zero-truncated Taylor proposal."""
    cur_terms = fam.lam_cache.get("terms")
    if cur_terms is None or cur_terms.lam != fam.lam:
        cur_terms = lambda_terms(D, fam.lam, fam.corr)
    lp0, f1, f2 = cur_terms.evaluate(fam.tau, fam.alpha, prior.a_lambda, prior.b_lambda)
    fwd = _lambda_proposal(f1, f2, fam.lam)
    if fwd is not None:
        new = _truncnorm_draw(fwd[0], fwd[1], rng)
        lq_f = _truncnorm_logpdf(new, *fwd) if new > 0 else 0.0
    else:
        new = fam.lam * math.exp(LAMBDA_RW_SD * rng.standard_normal())
        lq_f = _lognormal_rw_logpdf(new, fam.lam)
    logu = math.log(rng.random())
    if not (new > 0 and math.isfinite(new)):
        return False
    try:
        new_terms = lambda_terms(D, new)
    except NumericalError:
        return False
    lp1, g1, g2 = new_terms.evaluate(fam.tau, fam.alpha, prior.a_lambda, prior.b_lambda)
    rev = _lambda_proposal(g1, g2, new)
    if rev is not None:
        lq_r = _truncnorm_logpdf(fam.lam, *rev)
    else:
        lq_r = _lognormal_rw_logpdf(fam.lam, new)
    if logu < lp1 - lp0 + lq_r - lq_f:
        fam.lam = new
        fam.corr = new_terms.corr
        fam.lam_cache["terms"] = new_terms
        return True
    fam.lam_cache["terms"] = cur_terms
    return False


def update_alpha_gibbs(fam: FamilyState, prior: FamilyPrior, rng: np.random.Generator) -> float:
    """Conjugate draw ``alpha ~ Gamma((n + a)/2, rate=(tau' E^-1 tau + b)/2)``."""
    n = fam.tau.size
    quad = fam.corr.quad(fam.tau)
    shape = 0.5 * (n + prior.a_alpha)
    rate = 0.5 * (quad + prior.b_alpha)
    fam.alpha = float(rng.gamma(shape, 1.0 / rate))
    return fam.alpha


# --------------------------------------------------------------------------
# Draw containers
# --------------------------------------------------------------------------

@dataclass
class FamilyAcceptance:
    n_sites: int
    lam_accepted: int = 0
    lam_attempts: int = 0
    model_accepted: int = 0
    model_attempts: int = 0
    tau_accepted: np.ndarray = None
    tau_attempts: np.ndarray = None

    def __post_init__(self):
        if self.tau_accepted is None:
            self.tau_accepted = np.zeros(self.n_sites, dtype=np.int64)
        if self.tau_attempts is None:
            self.tau_attempts = np.zeros(self.n_sites, dtype=np.int64)

    @property
    def lambda_rate(self) -> float:
        return self.lam_accepted / self.lam_attempts if self.lam_attempts else math.nan

    @property
    def model_rate(self) -> float:
        return self.model_accepted / self.model_attempts if self.model_attempts else math.nan

    @property
    def tau_rates(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.tau_attempts > 0, self.tau_accepted / np.maximum(self.tau_attempts, 1),
                            np.nan)

    def summary(self) -> dict:
        r = self.tau_rates
        has = np.isfinite(r).any()
        return {
            "lambda": self.lambda_rate,
            "worst_tau": float(np.nanmin(r)) if has else math.nan,
            "mean_tau": float(np.nanmean(r)) if has else math.nan,
            "best_tau": float(np.nanmax(r)) if has else math.nan,
            "model": self.model_rate,
            "model_attempts": self.model_attempts,
        }

    def to_dict(self) -> dict:
        return {"lam_accepted": self.lam_accepted, "lam_attempts": self.lam_attempts,
                "model_accepted": self.model_accepted, "model_attempts": self.model_attempts,
                "tau_accepted": self.tau_accepted.tolist(), "tau_attempts": self.tau_attempts.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FamilyAcceptance":
        ta = np.asarray(d["tau_accepted"], dtype=np.int64)
        return cls(ta.size, d["lam_accepted"], d["lam_attempts"], d["model_accepted"],
                   d["model_attempts"], ta, np.asarray(d["tau_attempts"], dtype=np.int64))


@dataclass
class AcceptanceStats:
    families: dict[str, FamilyAcceptance]

    FAMILY_LABELS = {"mu": "Location (μ)", "kappa": "Precision (κ)", "xi": "Shape (ξ)"}

    def table(self) -> list[dict]:
        """Rows with the columns Model, λ, Worst τ, Mean τ, Best τ."""
        rows = []
        for name, acc in self.families.items():
            s = acc.summary()
            rows.append({"Model": self.FAMILY_LABELS.get(name, name), "λ": s["lambda"],
                         "Worst τ": s["worst_tau"], "Mean τ": s["mean_tau"],
                         "Best τ": s["best_tau"]})
        return rows


@dataclass
class FamilyDraws:
    theta: np.ndarray
    mask: np.ndarray
    tau: np.ndarray
    alpha: np.ndarray
    lam: np.ndarray
    frozen: bool = False

    def upsilon(self, X: np.ndarray) -> np.ndarray:
        """Per-draw linear predictor at the observed sites, shape (R, n)."""
        return self.theta @ X.T + self.tau

    def take(self, idx) -> "FamilyDraws":
        return FamilyDraws(self.theta[idx], self.mask[idx], self.tau[idx], self.alpha[idx],
                           self.lam[idx], self.frozen)


@dataclass
class PosteriorDraws:
    families: dict[str, FamilyDraws]
    iterations: np.ndarray
    site_ids: tuple
    coords: np.ndarray
    X: np.ndarray
    column_names: tuple
    acceptance: AcceptanceStats
    config: SamplerConfig

    @property
    def n_draws(self) -> int:
        return int(self.iterations.size)

    def site_params(self) -> dict[str, np.ndarray]:
        """mu, kappa, xi at the observed sites, each (R, n)."""
        return {f: self.families[f].upsilon(self.X) for f in FAMILIES}

    def thinned(self, step: int) -> "PosteriorDraws":
        idx = np.arange(0, self.n_draws, step)
        return replace(self, families={k: v.take(idx) for k, v in self.families.items()},
                       iterations=self.iterations[idx])


# --------------------------------------------------------------------------
# Chain
# --------------------------------------------------------------------------

def _moment_start(dataset: Dataset) -> tuple[float, float]:
    locs, precs = [], []
    for s in dataset.series:
        v = s.array
        if v.size >= 2 and np.std(v, ddof=1) > 0:
            sd = float(np.std(v, ddof=1))
            locs.append(float(np.mean(v)) - 0.45 * sd)
            precs.append(1.283 / sd)
    if not locs:
        y = dataset.y
        sd = float(np.std(y)) if y.size > 1 and np.std(y) > 0 else 1.0
        return float(np.mean(y)) - 0.45 * sd, 1.283 / sd
    return float(np.median(locs)), float(np.median(precs))


class Chain:
    """One Markov chain over the full hierarchy. Strictly sequential."""

    def __init__(self, dataset: Dataset, config: SamplerConfig,
                 rng: np.random.Generator | None = None):
        self.data = dataset
        self.cfg = config
        self.rng = np.random.default_rng(config.seed) if rng is None else rng
        self.X = dataset.X
        self.names = dataset.column_names
        self.n = dataset.n_sites
        self.y = dataset.y
        self.starts = dataset.starts
        self.D = distances(dataset.coords)
        self.kind = 0 if config.likelihood == "gev" else 1
        self.ups = np.zeros((3, self.n))
        ncol = self.X.shape[1]
        self.regression_priors = {
            f: RegressionPrior.isotropic(ncol, config.priors[f].theta0_intercept,
                                         config.priors[f].theta_sd) for f in FAMILIES}
        self.allowed, self.moves = {}, {}
        self.families: dict[str, FamilyState] = {}
        self._init_state()
        self.acceptance = AcceptanceStats({f: FamilyAcceptance(self.n) for f in FAMILIES})

    # -- setup ------------------------------------------------------------

    def _scenario_mask(self, fam: str) -> tuple[np.ndarray, np.ndarray, bool]:
        """(initial mask, movable columns, whether model moves happen)."""
        ncol = self.X.shape[1]
        none = np.zeros(ncol, dtype=bool)
        scen = self.cfg.scenario
        if scen == "Full":
            return np.ones(ncol, dtype=bool), none, False
        if scen == "NoCovar":
            m = constant_only(ncol)
            for c in ("lat", "lon"):
                if c in self.names:
                    m[self.names.index(c)] = True
            return m, none, False
        allowed = ~constant_only(ncol)
        return constant_only(ncol), allowed, bool(allowed.any())

    def _init_state(self):
        cfg = self.cfg
        mu0, kappa0 = _moment_start(self.data) if self.kind == 0 else (None, None)
        starts = {"mu": mu0, "kappa": kappa0, "xi": 0.1 if self.kind == 0 else None}
        for k, f in enumerate(FAMILIES):
            prior = cfg.priors[f]
            rp = self.regression_priors[f]
            mask, allowed, moves = self._scenario_mask(f)
            frozen = f not in cfg.families or (f == "xi" and cfg.scenario == "Fixed")
            theta = rp.theta0.copy()
            if starts[f] is not None:
                theta[0] = starts[f]
            if f == "xi" and cfg.scenario == "Fixed":
                theta[:] = 0.0
                theta[0] = cfg.fixed_xi
                mask, allowed, moves = constant_only(theta.size), allowed & False, False
            theta[~mask] = 0.0
            alpha = prior.a_alpha / prior.b_alpha
            lam = prior.a_lambda / prior.b_lambda
            tau = np.zeros(self.n)
            over = cfg.init.get(f, {})
            if "theta" in over:
                theta = np.asarray(over["theta"], dtype=float).copy()
            if "mask" in over:
                mask = np.asarray(over["mask"], dtype=bool).copy()
            if "tau" in over:
                tau = np.asarray(over["tau"], dtype=float).copy()
            alpha = float(over.get("alpha", alpha))
            lam = float(over.get("lam", lam))
            fixed = self.X @ theta
            self.ups[k] = fixed + tau
            fam = FamilyState(f, theta, mask, tau, self.ups[k], fixed, alpha, lam,
                              frozen=frozen)
            fam.corr = spd_factorize(np.exp(-self.D / lam), scale=1.0)
            self.families[f] = fam
            self.allowed[f] = allowed
            self.moves[f] = moves and not frozen
        if self.kind == 0:
            self._repair_support()

    def log_likelihood(self) -> float:
        from .gev import gev_logpdf

        counts = np.diff(self.starts)
        p = [np.repeat(self.ups[k], counts) for k in range(3)]
        return float(np.sum(gev_logpdf(self.y, p[0], p[1], p[2])))

    def _repair_support(self):
        if np.any(self.ups[1] <= 0):
            raise NumericalError("initial inverse-scale values must be positive")
        xi = self.families["xi"]
        for _ in range(80):
            if np.isfinite(self.log_likelihood()):
                return
            if xi.frozen and self.cfg.scenario == "Fixed":
                break
            xi.theta = xi.theta * 0.5
            xi.tau = xi.tau * 0.5
            xi.fixed = self.X @ xi.theta
            xi.upsilon[:] = xi.fixed + xi.tau
        if not np.isfinite(self.log_likelihood()):
            raise NumericalError("could not find an initial state inside the GEV support")

    def tau_conditional(self, f: str, s: int) -> tuple[float, float, float]:
        """Log full conditional of ``tau_s`` (up to a constant) and its first two
        derivatives at the current state, assembled as in the compiled sweep."""
        fam = self.families[f]
        Q = fam.precision
        pvar = 1.0 / Q[s, s]
        cur = float(fam.tau[s])
        pmean = cur - float(Q[s] @ fam.tau) * pvar
        a, b = self.starts[s], self.starts[s + 1]
        ll, g, h, _ = _site_terms(FAMILIES.index(f), self.kind, self.cfg.surrogate_sd, self.y,
                                  a, b, *self.ups[:, s])
        return (ll - 0.5 * (cur - pmean) ** 2 / pvar, g - (cur - pmean) / pvar, h - 1.0 / pvar)

    # -- updates ----------------------------------------------------------

    def sweep(self, f: str, order: np.ndarray | None = None, count: bool = True) -> int:
        fam = self.families[f]
        k = FAMILIES.index(f)
        if order is None:
            order = self.rng.permutation(self.n)
        m = order.size
        z = self.rng.standard_normal(m)
        logu = np.log(self.rng.random(m))
        acc = self.acceptance.families[f]
        hits = np.zeros(self.n, dtype=np.int64)
        n_acc = _sweep_kernel(k, self.kind, self.cfg.surrogate_sd, self.y, self.starts,
                              order.astype(np.int64), fam.tau, fam.fixed, self.ups,
                              fam.precision, z, logu, hits, C_MIN, TAU_RW_SD)
        if count:
            acc.tau_accepted += hits
            acc.tau_attempts[order] += 1
        return n_acc

    def step(self, count: bool = True):
        skip = self.cfg.skip
        for f in FAMILIES:
            fam = self.families[f]
            if fam.frozen:
                continue
            prior = self.cfg.priors[f]
            acc = self.acceptance.families[f]
            if "theta" not in skip:
                move = self.moves[f] and "model" not in skip
                res = update_model_and_theta(fam, self.X, self.regression_priors[f], self.rng,
                                             self.allowed[f], move)
                if count and res is not None:
                    acc.model_attempts += 1
                    acc.model_accepted += int(res)
            if "tau" not in skip:
                self.sweep(f, count=count)
            if "alpha" not in skip:
                update_alpha_gibbs(fam, prior, self.rng)
            if "lambda" not in skip:
                ok = update_lambda_mh(fam, self.D, prior, self.rng)
                if count:
                    acc.lam_attempts += 1
                    acc.lam_accepted += int(ok)

    # -- driver -----------------------------------------------------------

    def run(self, progress=None) -> PosteriorDraws:
        cfg = self.cfg
        R = cfg.n_records
        ncol = self.X.shape[1]
        buf = {f: FamilyDraws(np.zeros((R, ncol)), np.zeros((R, ncol), dtype=bool),
                              np.zeros((R, self.n)), np.zeros(R), np.zeros(R),
                              self.families[f].frozen) for f in FAMILIES}
        iters = np.zeros(R, dtype=np.int64)
        r = 0
        for it in range(1, cfg.iterations + 1):
            post = it > cfg.burn_in
            self.step(count=post)
            if post and (it - cfg.burn_in) % cfg.thin == 0 and r < R:
                for f in FAMILIES:
                    fam, d = self.families[f], buf[f]
                    d.theta[r] = fam.theta
                    d.mask[r] = fam.mask
                    d.tau[r] = fam.tau
                    d.alpha[r] = fam.alpha
                    d.lam[r] = fam.lam
                iters[r] = it
                r += 1
            if progress is not None and it % 1000 == 0:
                progress(it)
        return PosteriorDraws(buf, iters, self.data.station_ids, self.data.coords, self.X,
                              self.names, self.acceptance, cfg)


def run_chain(dataset: Dataset, config: SamplerConfig,
              seed_seq: np.random.SeedSequence | None = None, progress=None) -> PosteriorDraws:
    """Run one chain; deterministic given ``config.seed`` (or ``seed_seq``)."""
    rng = np.random.default_rng(seed_seq if seed_seq is not None else config.seed)
    return Chain(dataset, config, rng).run(progress)


# --------------------------------------------------------------------------
# Multiple chains
# --------------------------------------------------------------------------

@dataclass
class ConvergenceReport:
    iterations: np.ndarray
    running_means: np.ndarray
    spread: np.ndarray
    posterior_sd: float
    acceptance: list[AcceptanceStats]
    seeds: list[int]

    @property
    def final_spread(self) -> float:
        return float(self.spread[-1])

    @property
    def relative_final_spread(self) -> float:
        return self.final_spread / self.posterior_sd if self.posterior_sd > 0 else math.inf


def _chain_task(args):
    dataset, config, k = args
    draws = run_chain(dataset, config, np.random.SeedSequence([config.seed, k]))
    return draws.families["mu"].theta[:, 0].copy(), draws.iterations, draws.acceptance


def run_multichain(dataset: Dataset, config: SamplerConfig, n_chains: int = 15,
                   threads: int = 1) -> ConvergenceReport:
    """Independent chains with seeds derived from (seed, chain index).

    Tracks the running posterior mean of the location intercept in every
    chain and the cross-chain spread (max - min) of those running means.
    """
    from .parallel import parallel_map

    results = parallel_map(_chain_task, [(dataset, config, k) for k in range(n_chains)], threads)
    intercepts = np.vstack([r[0] for r in results])
    counts = np.arange(1, intercepts.shape[1] + 1)
    running = np.cumsum(intercepts, axis=1) / counts
    spread = running.max(axis=0) - running.min(axis=0)
    return ConvergenceReport(results[0][1], running, spread, float(np.std(intercepts)),
                             [r[2] for r in results], list(range(n_chains)))


def iter_families(names: Iterable[str] | None = None):
    return tuple(FAMILIES if names is None else names)
