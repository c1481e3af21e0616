import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from stoch_boussinesq.spectral import Grid

settings.register_profile(
    "suite", deadline=None, max_examples=20, suppress_health_check=[HealthCheck.function_scoped_fixture]
)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def grid():
    return Grid(16)


@pytest.fixture(scope="session")
def grid8():
    return Grid(8)


@pytest.fixture
def rng():
    return np.random.default_rng(20261019)


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance verdict lines recorded by tests/test_acceptance.py."""
    lines = []
    for reports in terminalreporter.stats.values():
        for rep in reports:
            if getattr(rep, "when", None) == "call":
                lines.extend(v for k, v in getattr(rep, "user_properties", []) if k == "acceptance")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
