from importlib.resources import files

import pytest

from riskrestore.formulation import load_fleet
from riskrestore.netgraph import load_network
from riskrestore.uncertainty import load_mode_table, load_scenarios

FIXTURES = files("riskrestore") / "fixtures"


def fixture_path(name):
    return FIXTURES / name


@pytest.fixture(scope="session")
def toy():
    """Six-bus network, one DER, two hand-written scenarios over four steps."""
    net = load_network(fixture_path("toy_network.json"))
    return {
        "net": net,
        "fleet": load_fleet(fixture_path("toy_fleet.json")),
        "scenarios": load_scenarios(fixture_path("toy_scenarios.json")),
        "table": load_mode_table(fixture_path("toy_modes.json")),
    }


@pytest.fixture(scope="session")
def medium():
    net = load_network(fixture_path("medium_network.json"))
    return {
        "net": net,
        "fleet": load_fleet(fixture_path("medium_fleet.json")),
        "scenarios": load_scenarios(fixture_path("medium_scenarios.json")),
        "table": load_mode_table(fixture_path("medium_modes.json")),
    }


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
