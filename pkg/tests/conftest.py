import pytest

from astromorph.linalg import SeededRng

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return SeededRng(1234, ("tests",))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
