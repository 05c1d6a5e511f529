import numpy as np
import pytest

from multrigid.geometry import Bump
from multrigid.inducing import induce, induce_matched
from multrigid.rigidity import RunConfig, rigidity_test
from multrigid.unimodal import UnimodalMap, conjugate_map

PHI = Bump(0.1)


@pytest.fixture(scope="session")
def q1():
    return UnimodalMap(1.0)


@pytest.fixture(scope="session")
def g_bump(q1):
    """The conjugate phi_{0.1} ∘ q_1 ∘ phi_{0.1}^-1, whose true conjugacy to q_1 is phi_{0.1}."""
    return conjugate_map(q1, PHI)


@pytest.fixture(scope="session")
def induced_q1(q1):
    return induce(q1)


@pytest.fixture(scope="session")
def induced_g(g_bump, induced_q1):
    return induce_matched(g_bump, induced_q1)


@pytest.fixture(scope="session")
def rigidity_pair(q1, g_bump):
    return rigidity_test(q1, g_bump, RunConfig())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
