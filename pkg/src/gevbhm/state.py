"""Mutable chain state shared by the regression and sampler modules."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spatial import SpdFactor

FAMILIES = ("mu", "kappa", "xi")


@dataclass
class FamilyState:
    """State of one GEV parameter family.

    ``upsilon`` is a view into the chain-wide (3, n) array so the numba sweep
    sees updates in place. Invariant after every block:
    ``upsilon == fixed + tau`` with ``fixed == X @ theta``.
    """

    name: str
    theta: np.ndarray
    mask: np.ndarray
    tau: np.ndarray
    upsilon: np.ndarray
    fixed: np.ndarray
    alpha: float
    lam: float
    corr: SpdFactor | None = None
    frozen: bool = False
    lam_cache: dict = field(default_factory=dict, repr=False)

    @property
    def K(self) -> SpdFactor:
        """Factor of the field covariance ``E(lambda) / alpha``."""
        return self.corr.scaled(1.0 / self.alpha)

    @property
    def precision(self) -> np.ndarray:
        return self.alpha * self.corr.inverse

    def consistency_error(self, X: np.ndarray) -> float:
        return float(np.max(np.abs(self.upsilon - X @ self.theta - self.tau)))
