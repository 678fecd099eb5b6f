"""
Shared pytest configuration for the Versor toolkit.
"""

import numpy as np
import pytest


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance tests (training, latency fits)")


@pytest.fixture
def rng():
    """Seeded generator so every test is reproducible."""
    return np.random.default_rng(1234)
