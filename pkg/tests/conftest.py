import pytest

_LINES = []


@pytest.fixture(scope="session")
def verdict():
    """Record one pass/fail line per acceptance criterion."""
    def record(n, ok, detail):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _LINES.append((n, line))
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_LINES, key=lambda t: t[0]):
        terminalreporter.write_line(line)
