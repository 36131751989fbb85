"""Per-criterion pass/fail lines for the acceptance suite.

Tests carry ``@pytest.mark.criterion(n, "title")``; a criterion passes when
every test carrying its number passed.
"""

import pytest

_results: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _results.setdefault(number, {"title": title, "ok": True, "tests": 0, "failed": []})
    if report.when == "call" or (report.when == "setup" and not report.passed):
        entry["tests"] += report.when == "call"
        if report.failed:
            entry["ok"] = False
            entry["failed"].append(item.name)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        entry = _results[number]
        status = "PASS" if entry["ok"] and entry["tests"] else "FAIL"
        line = f"criterion {number:2d} [PRIMARY] {status}  {entry['title']}"
        if entry["failed"]:
            line += f"  (failed: {', '.join(entry['failed'])})"
        terminalreporter.write_line(line)
