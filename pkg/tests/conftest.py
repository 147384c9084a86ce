import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

from gztreg.simulate import random_correlation

settings.register_profile(
    "default", max_examples=60, deadline=None,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@st.composite
def correlations(draw, min_dim=2, max_dim=8):
    """Random correlation matrices, driven by a drawn seed."""
    m = draw(st.integers(min_dim, max_dim))
    seed = draw(st.integers(0, 2**32 - 1))
    return random_correlation(m, np.random.default_rng(seed))


@st.composite
def symmetric_matrices(draw, min_dim=1, max_dim=6, scale=2.0):
    m = draw(st.integers(min_dim, max_dim))
    seed = draw(st.integers(0, 2**32 - 1))
    A = np.random.default_rng(seed).uniform(-scale, scale, (m, m))
    return 0.5 * (A + A.T)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def ar1(rho, m):
    idx = np.arange(m)
    return rho ** np.abs(idx[:, None] - idx[None, :])
