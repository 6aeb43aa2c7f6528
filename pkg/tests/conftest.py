import pytest

ACCEPTANCE_LINES = {}


def record_verdict(verdict):
    ACCEPTANCE_LINES[verdict.id] = verdict.line()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
