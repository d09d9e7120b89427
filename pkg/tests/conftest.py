import pytest

from sramfault.cli import fixture_dir
from sramfault.fixtures import SPARSE, structured_faultmap
from sramfault.nn import load_data, load_network
from sramfault.profiler import extract_profile


@pytest.fixture(scope="session")
def fixture_net():
    return load_network(fixture_dir())


@pytest.fixture(scope="session")
def fixture_data():
    return load_data(fixture_dir())


@pytest.fixture(scope="session")
def structured_map():
    return structured_faultmap(2000, 11, SPARSE, voltage_mv=540)


@pytest.fixture(scope="session")
def structured_profile(structured_map):
    return extract_profile(structured_map)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import VERDICTS

    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
