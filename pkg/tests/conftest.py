import warnings

import pytest

from highway_ips.channel import BeyondCapWarning, RangeModel

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def model25():
    return RangeModel.for_range(25.0)


@pytest.fixture(scope="session")
def small_model():
    # short table keeps brute-force oracles cheap
    return RangeModel.for_range(25.0, cap=16)


@pytest.fixture(autouse=True)
def _quiet_cap_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BeyondCapWarning)
        yield


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
