import pytest

from targetcharge.mechanisms import Dataset, LinearQuery


@pytest.fixture
def ones():
    """Counting query over any record."""
    return LinearQuery(lambda r: 1.0, 0.0, "count")


def make_dataset(n, **fields):
    return Dataset(tuple(dict(fields, i=i) for i in range(n)))


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
