import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from carpetks import estimate_rho_beta, p_capacity, standard_carpet  # noqa: E402
from carpetks.functionals import GeometryConstants  # noqa: E402


@pytest.fixture(scope="session")
def carpet():
    return standard_carpet()


@pytest.fixture(scope="session")
def rho_est(carpet):
    return estimate_rho_beta(carpet, 2.0, [3, 4, 5])


@pytest.fixture(scope="session")
def consts(carpet, rho_est):
    return GeometryConstants.for_spec(carpet, 2.0, rho_est.beta_hat)


@pytest.fixture(scope="session")
def harmonic(carpet):
    """2-harmonic capacity solutions as cell functions, keyed by level."""
    cache = {}

    def get(m):
        if m not in cache:
            cache[m] = p_capacity(carpet, m, 2.0).cell_function(carpet)
        return cache[m]

    return get


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
