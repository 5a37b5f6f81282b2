"""Shared pytest wiring: import path for the helper modules and a per-criterion
pass/fail summary for tests marked ``@pytest.mark.criterion(n, title)``."""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA = {}  # number -> {"title": str, "outcomes": [str]}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark:
            number, title = mark.args
            _CRITERIA.setdefault(number, {"title": title, "outcomes": [], "ids": set()})["ids"].add(item.nodeid)


def pytest_runtest_logreport(report):
    for entry in _CRITERIA.values():
        if report.nodeid in entry["ids"]:
            if report.when == "call" or report.outcome != "passed":
                entry["outcomes"].append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        ran = entry["outcomes"]
        if not ran:
            status = "NOT RUN"
        elif all(o == "passed" for o in ran) and len(ran) >= len(entry["ids"]):
            status = "PASS"
        else:
            status = "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status}  {entry['title']}")
