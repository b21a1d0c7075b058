"""Bayesian hierarchical GEV model for spatial extremes.

GEV margins at stations, linear models with Bayesian model averaging on all
three parameters, exponential Gaussian-process random effects, an MCMC engine
with curvature-matched proposals, and kriging to ungauged grid cells.
"""

from .dataset import Dataset, GridSpec, Projection, build_dataset
from .errors import ConfigError, DataError, GevBhmError, NumericalError, StoreError
from .gev import (AnnualSeries, GevParams, dloglik_kappa, dloglik_mu, dloglik_xi, gev_cdf,
                  log_density, mle_fit, return_level, sample)
from .predict import (ReturnLevelMap, build_return_level_map, interpolate_parameters,
                      return_levels_at_station)
from .sampler import PosteriorDraws, SamplerConfig, run_chain, run_multichain

__version__ = "0.1.0"

__all__ = [
    "AnnualSeries", "ConfigError", "DataError", "Dataset", "GevBhmError", "GevParams", "GridSpec",
    "NumericalError", "PosteriorDraws", "Projection", "ReturnLevelMap", "SamplerConfig",
    "StoreError", "build_dataset", "build_return_level_map", "dloglik_kappa", "dloglik_mu",
    "dloglik_xi", "gev_cdf", "interpolate_parameters", "log_density", "mle_fit", "return_level",
    "return_levels_at_station", "run_chain", "run_multichain", "sample",
]
