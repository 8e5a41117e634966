import warnings

import numpy as np
import pytest
from hypothesis import settings

from mflmm.market_data import DiscountCurve, TenorStructure, bootstrap_forwards, default_curve_path, load_curve

settings.register_profile("mflmm", max_examples=60, deadline=None)
settings.load_profile("mflmm")


ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running Monte Carlo checks")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def eur_curve():
    """Forward curve on the bundled illustrative EUR curve, 50 yearly periods."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        disc = load_curve(default_curve_path())
    return bootstrap_forwards(disc, TenorStructure.yearly(50), 0.01)


def flat_curve(rate: float = 0.02, horizon: int = 10, displacement: float = 0.01):
    mats = np.arange(1, horizon + 1, dtype=float)
    disc = DiscountCurve.from_spot_rates(mats, np.full(mats.size, rate))
    return bootstrap_forwards(disc, TenorStructure.yearly(horizon), displacement)


@pytest.fixture
def flat():
    return flat_curve()
