import logging

import numpy as np
import pytest

# the vector-data rotation warning is expected noise in most trainer tests
logging.getLogger("clusterssl.trainer").setLevel(logging.ERROR)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_gmm():
    from clusterssl.data import make_gaussian_mixture, partition

    ds = make_gaussian_mixture(4, 400, 16, 6.0, seed=7)
    split = partition(ds, 4, 0.2, seed=1)
    return ds, split
