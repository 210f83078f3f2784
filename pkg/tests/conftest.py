"""Shared test plumbing: the acceptance-criterion reporter.

Each acceptance test funnels its verdict through the ``criterion_report``
fixture, which prints one PASS/FAIL line, remembers it, and asserts.  The
collected lines are replayed in a dedicated section of the terminal summary
so the whole checklist is visible in one place after a run.
"""

import pytest

_LINES = []


@pytest.fixture
def criterion_report():
    def _record(name, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        print(line)
        _LINES.append(line)
        assert ok, line
    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
