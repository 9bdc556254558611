"""Shared pytest hooks: the acceptance suite reports one line per criterion."""

import pytest

ACCEPTANCE_RESULTS = {}


@pytest.fixture
def record_criterion():
    """Store ``(passed, detail)`` for a numbered acceptance criterion."""

    def record(number, title, passed, detail):
        ACCEPTANCE_RESULTS[number] = (title, bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        title, passed, detail = ACCEPTANCE_RESULTS[number]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number} [{status}] {title}: {detail}")
