import pytest

from convlyap.kappa import PiecewiseKappa


@pytest.fixture
def identity():
    return PiecewiseKappa([0.0, 1.0], [0.0, 1.0], 1.0)


@pytest.fixture
def bent():
    """Knots (0,0), (1,0.25), (2,1)."""
    return PiecewiseKappa([0.0, 1.0, 2.0], [0.0, 0.25, 1.0], 0.75)


def pytest_terminal_summary(terminalreporter):
    import _helpers

    if _helpers.REPORT_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _helpers.REPORT_LINES:
            terminalreporter.write_line(line)
