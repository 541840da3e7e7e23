import pytest

_LINES = []


@pytest.fixture
def criterion():
    """Record one acceptance line; printed together at the end of the run."""
    def record(label, ok, detail=""):
        _LINES.append(f"{'PASS' if ok else 'FAIL'}  {label}  {detail}".rstrip())
        print(_LINES[-1])
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
