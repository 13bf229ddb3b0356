import pytest

#: (criterion number, passed, detail) filled in by the acceptance tests
ACCEPTANCE_LINES: list = []


@pytest.fixture
def verdict():
    """Record a criterion outcome for the end-of-run summary, then assert it."""

    def _record(number: int, passed: bool, detail: str):
        ACCEPTANCE_LINES.append((number, bool(passed), detail))
        assert passed, f"criterion {number}: {detail}"

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}")
