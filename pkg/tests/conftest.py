import warnings

import numpy as np
import pytest

from etcsim.demo import demo_certification, demo_plant

# The eigenvalue cross-check of the 3x3 flow form is informational; keep
# the suite output readable.
warnings.filterwarnings("ignore", message=".*principal-minor and eigenvalue.*")


@pytest.fixture(scope="session")
def certification():
    return demo_certification()


@pytest.fixture(scope="session")
def demo_cert(certification):
    return certification.cert


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def plant_eps03():
    return demo_plant(0.03)
