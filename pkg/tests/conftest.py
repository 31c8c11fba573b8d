"""Collects acceptance-criterion outcomes and prints one line per criterion."""

from collections import OrderedDict

import pytest

_CRITERIA: "OrderedDict[int, dict]" = OrderedDict()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by this test")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark:
            number, title = mark.args
            _CRITERIA.setdefault(number, {"title": title, "outcomes": {}})


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if not mark:
        return
    entry = _CRITERIA[mark.args[0]]["outcomes"]
    if report.when == "call" or (report.when == "setup" and not report.passed):
        entry[item.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        outcomes = list(entry["outcomes"].values())
        if not outcomes:
            status = "NOT RUN"
        elif all(o == "passed" for o in outcomes):
            status = "PASS"
        else:
            status = "FAIL"
        terminalreporter.write_line(f"criterion {number:>2} {status:<7} {entry['title']} ({len(outcomes)} checks)")
