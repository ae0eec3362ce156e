import pytest

_LINES: list[str] = []


@pytest.fixture(scope="session")
def report_line():
    """Collect a line for the end-of-run acceptance summary."""
    return _LINES.append


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
