"""Collects acceptance-criterion outcomes and prints one line per criterion."""

import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

_results = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n = marker.args[0]
    if report.when == "call" or report.failed:
        passed = report.passed and not report.skipped
        _results.setdefault(n, []).append((item.name, passed, report.skipped))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_results):
        runs = _results[n]
        if all(skipped for _, _, skipped in runs):
            status = "SKIP"
        else:
            status = "PASS" if all(ok or skipped for _, ok, skipped in runs) else "FAIL"
        names = ", ".join(name for name, _, _ in runs)
        tr.write_line(f"criterion {n}: {status}  ({names})")
