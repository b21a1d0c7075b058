import numpy as np
import pytest

from gevbhm.oracle import SyntheticSpec, generate_synthetic
from gevbhm.sampler import SamplerConfig


@pytest.fixture(scope="session")
def small():
    """12 stations, 15 years: big enough to exercise every update, fast to sample."""
    spec = SyntheticSpec(n_sites=12, n_years=15, grid_shape=(8, 8), seed=3)
    return generate_synthetic(spec)


@pytest.fixture(scope="session")
def small_ds(small):
    return small[0]


@pytest.fixture(scope="session")
def small_draws(small_ds):
    from gevbhm.sampler import run_chain

    return run_chain(small_ds, SamplerConfig(iterations=1500, burn_in=500, thin=5, seed=11))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
