import numpy as np
import pytest

from cvqueue.core import SignalDemandConfig
from cvqueue.sim import simulate_red_phases, substream_rng


@pytest.fixture(scope="session")
def cfg_mid() -> SignalDemandConfig:
    """The workhorse parameter point used by most pinned-value tests."""
    return SignalDemandConfig(lam=0.239, p=0.5)


@pytest.fixture(scope="session")
def batch_mid(cfg_mid):
    """50k simulated red phases at the workhorse point, shared across tests."""
    rng = substream_rng(1234, 0, 0)
    return simulate_red_phases(cfg_mid, 50_000, rng)


@pytest.fixture(scope="session")
def rng_factory():
    def make(*path: int) -> np.random.Generator:
        return substream_rng(4321, *path)

    return make
