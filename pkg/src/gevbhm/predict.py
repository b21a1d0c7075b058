"""Posterior return levels at stations and, through per-draw kriging, at grid cells."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .dataset import GridSpec
from .errors import DataError
from .gev import return_levels
from .parallel import parallel_map
from .sampler import PosteriorDraws
from .spatial import distances, spd_factorize
from .state import FAMILIES

log = logging.getLogger(__name__)

KAPPA_RETRIES = 100
KAPPA_FLOOR = 1e-6
CHUNK_CELLS = 1024


@dataclass
class ReturnLevelMap:
    cell_ids: tuple
    lat: np.ndarray
    lon: np.ndarray
    p_exceed: float
    quantiles: tuple[float, float]
    median: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    n_kappa_clamped: int = 0

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def __len__(self):
        return len(self.cell_ids)


def return_levels_at_station(draws: PosteriorDraws, site: int | str, p_exceed: float) -> np.ndarray:
    """Per-draw return level at an observed site."""
    s = draws.site_ids.index(site) if isinstance(site, str) else int(site)
    pr = {f: draws.families[f].theta @ draws.X[s] + draws.families[f].tau[:, s]
          for f in FAMILIES}
    return return_levels(p_exceed, pr["mu"], pr["kappa"], pr["xi"])


def _cell_rngs(seed: int, cells: np.ndarray) -> list[np.random.Generator]:
    return [np.random.default_rng(np.random.SeedSequence([seed, int(c)])) for c in cells]


def _krige_family(draws: PosteriorDraws, fam: str, coords: np.ndarray, X: np.ndarray,
                  idx: np.ndarray):
    """Per-draw linear predictor, kriging mean and sd at the targets, each (R, m)."""
    fd = draws.families[fam]
    fixed = fd.theta[idx] @ X.T
    R, m = fixed.shape
    mean = np.zeros((R, m))
    sd = np.zeros((R, m))
    if fd.frozen:
        return fixed, mean, sd
    D = distances(draws.coords)
    C = distances(draws.coords, coords)
    last = None
    for k, r in enumerate(idx):
        lam = fd.lam[r]
        if lam != last:
            factor = spd_factorize(np.exp(-D / lam), scale=1.0)
            cross = np.exp(-C / lam)
            w = factor.solve(cross)
            resid = np.clip(1.0 - np.einsum("ij,ij->j", cross, w), 0.0, None)
            last = lam
        mean[k] = fd.tau[r] @ w
        sd[k] = np.sqrt(resid / fd.alpha[r])
    return fixed, mean, sd


def _sample_targets(draws, coords, X, idx, rngs):
    """Parameter draws (R, m, 3) at targets, one kriging sample per posterior draw."""
    m = coords.shape[0]
    noise = np.stack([g.standard_normal((idx.size, 3)) for g in rngs], axis=1)
    out = np.empty((idx.size, m, 3))
    clamped = 0
    for k, f in enumerate(FAMILIES):
        fixed, mean, sd = _krige_family(draws, f, coords, X, idx)
        out[:, :, k] = fixed + mean + sd * noise[:, :, k]
        if f != "kappa":
            continue
        bad = out[:, :, 1] <= 0
        for j in np.flatnonzero(bad.any(axis=0)):
            g = rngs[j]
            for r in np.flatnonzero(bad[:, j]):
                val = out[r, j, 1]
                for _ in range(KAPPA_RETRIES):
                    val = fixed[r, j] + mean[r, j] + sd[r, j] * g.standard_normal()
                    if val > 0:
                        break
                if not val > 0:
                    val = KAPPA_FLOOR
                    clamped += 1
                out[r, j, 1] = val
    if clamped:
        log.warning("clamped %d non-positive inverse-scale draws to %g", clamped, KAPPA_FLOOR)
    return out, clamped


def _check_columns(draws: PosteriorDraws, X: np.ndarray, names=None):
    if X.shape[1] != draws.X.shape[1]:
        raise DataError(f"target covariates have {X.shape[1]} columns, model has {draws.X.shape[1]}")
    if names is not None and tuple(names) != tuple(draws.column_names[1:]):
        raise DataError(f"covariate mismatch: {tuple(names)} vs {tuple(draws.column_names[1:])}")


def interpolate_parameters(draws: PosteriorDraws, x_q, coord_q, rng: np.random.Generator,
                           every: int = 1) -> np.ndarray:
    """Per-draw (mu, kappa, xi) at an unobserved target, shape (R, 3).

    ``x_q`` is the standardized design row including the constant.
    """
    X = np.atleast_2d(np.asarray(x_q, dtype=float))
    coords = np.atleast_2d(np.asarray(coord_q, dtype=float))
    _check_columns(draws, X)
    idx = np.arange(0, draws.n_draws, every)
    out, _ = _sample_targets(draws, coords, X, idx, [rng])
    return out[:, 0, :]


def _map_chunk(args):
    draws, coords, X, cells, idx, p_exceed, q, seed = args
    params, clamped = _sample_targets(draws, coords, X, idx, _cell_rngs(seed, cells))
    z = return_levels(p_exceed, params[:, :, 0], params[:, :, 1], params[:, :, 2])
    lo, med, hi = np.quantile(z, [q[0], 0.5, q[1]], axis=0)
    return med, lo, hi, clamped


def build_return_level_map(draws: PosteriorDraws, grid: GridSpec, p_exceed: float = 0.05,
                           quantiles: tuple[float, float] = (0.025, 0.975), seed: int = 0,
                           every: int = 1, threads: int = 1,
                           chunk: int = CHUNK_CELLS) -> ReturnLevelMap:
    """Cell-by-cell posterior summaries of the return level.

    Cells are independent: each has its own RNG stream seeded from
    ``(seed, cell index)``, so the map does not depend on the thread count.
    Chunk size can change the last bits through BLAS blocking.
    """
    if draws.n_draws == 0:
        raise DataError("no posterior draws")
    _check_columns(draws, grid.X, grid.covariate_names)
    idx = np.arange(0, draws.n_draws, every)
    m = len(grid)
    tasks = []
    for start in range(0, m, chunk):
        cells = np.arange(start, min(m, start + chunk))
        tasks.append((draws, grid.coords[cells], grid.X[cells], cells, idx, p_exceed,
                      tuple(quantiles), seed))
    res = parallel_map(_map_chunk, tasks, threads)
    med = np.concatenate([r[0] for r in res]) if res else np.zeros(0)
    lo = np.concatenate([r[1] for r in res]) if res else np.zeros(0)
    hi = np.concatenate([r[2] for r in res]) if res else np.zeros(0)
    return ReturnLevelMap(grid.cell_ids, grid.lat, grid.lon, p_exceed, tuple(quantiles),
                          med, lo, hi, int(sum(r[3] for r in res)))


def distance_to_nearest_site(draws: PosteriorDraws, coords: np.ndarray) -> np.ndarray:
    return distances(np.atleast_2d(coords), draws.coords).min(axis=1)


def period_to_p(period: float) -> float:
    if not period > 1:
        raise ValueError("return period must exceed 1 year")
    return 1.0 / period


def p_label(p_exceed: float) -> str:
    return f"M{int(round(1.0 / p_exceed))}" if math.isclose(1 / p_exceed, round(1 / p_exceed)) \
        else f"p{p_exceed:g}"
