import pytest

from coneflow.grid import RadialGrid

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def grid512():
    return RadialGrid.graded(512, 1e-3 / 40)


@pytest.fixture(scope="session")
def grid2048():
    return RadialGrid.graded(2048, 1e-5 / 40)
