import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

_ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Recorder for one acceptance line: ``criterion(number, ok, detail)``."""

    def record(number, ok, detail):
        _ACCEPTANCE_LINES.append((number, "PASS" if ok else "FAIL", detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, verdict, detail in sorted(_ACCEPTANCE_LINES):
        terminalreporter.write_line(f"criterion {number:>2}: {verdict}  {detail}")
