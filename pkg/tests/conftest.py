import pytest

_LINES = []


@pytest.fixture
def report():
    """Record one pass/fail summary line per acceptance criterion."""

    def add(label, ok, detail):
        _LINES.append(f"{label:<5} {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return add


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
