import sys

import numpy as np
import pytest

from polaron_renewal.ensemble import generate_ensemble


@pytest.fixture(scope="session")
def ens_alpha1():
    return generate_ensemble(1.0, 8, 10_000, 7)


@pytest.fixture(scope="session")
def ens_alpha03():
    return generate_ensemble(0.3, 8, 10_000, 8)


@pytest.fixture(scope="session")
def ens_alpha01():
    return generate_ensemble(0.1, 8, 10_000, 9)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = next((m for name, m in list(sys.modules.items()) if name.endswith("test_acceptance")), None)
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
