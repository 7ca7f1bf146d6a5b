"""Collects one PASS/FAIL line per acceptance criterion and prints them at the end."""
import re

import pytest

_DETAILS: dict[int, str] = {}
_OUTCOMES: dict[int, str] = {}
_NAME = re.compile(r"test_criterion_(\d+)_")


@pytest.fixture()
def criterion_note(request):
    m = _NAME.search(request.node.name)
    number = int(m.group(1)) if m else -1

    def note(text: str) -> None:
        _DETAILS[number] = text

    return note


def pytest_runtest_logreport(report):
    m = _NAME.search(report.nodeid)
    if not m:
        return
    number = int(m.group(1))
    if report.when == "call" or report.outcome != "passed":
        if report.outcome == "passed" and report.when == "call":
            _OUTCOMES.setdefault(number, "PASS")
        elif report.outcome != "passed":
            _OUTCOMES[number] = "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_OUTCOMES):
        detail = _DETAILS.get(number, "")
        terminalreporter.write_line(f"criterion {number:>2}: {_OUTCOMES[number]}  {detail}")
