import pytest

_LINES = []


@pytest.fixture
def report():
    """Record a one-line verdict for an acceptance criterion."""

    def record(criterion, passed, detail=""):
        verdict = passed if isinstance(passed, str) else ("PASS" if passed else "FAIL")
        line = f"criterion {criterion}: {verdict}  {detail}".rstrip()
        _LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(_LINES):
            terminalreporter.write_line(line)
