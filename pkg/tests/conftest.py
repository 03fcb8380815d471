"""Shared pytest plumbing: acceptance criteria get a verdict table."""

import pytest

_results = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "acceptance(num, summary): test standing in for one acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    num, summary = marker.args
    if report.when == "call":
        _results[num] = (summary, report.outcome)
    elif report.outcome != "passed" and num not in _results:
        # setup error or skip before the test body ran
        _results[num] = (summary, report.outcome)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_results):
        summary, outcome = _results[num]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {num:2d}: {verdict}  {summary}")
