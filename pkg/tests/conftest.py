import sys
from pathlib import Path

import pytest

# oracles.py lives next to the tests
sys.path.insert(0, str(Path(__file__).parent))

_results: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")


def pytest_runtest_logreport(report):
    marker = next((m for m in getattr(report, "_criterion", []) or []), None)
    if marker is None or report.when == "teardown":
        return
    number, title = marker
    if report.when == "setup" and report.passed:
        return
    detail = dict(report.user_properties).get("detail", "")
    outcome = "PASS" if report.passed else "FAIL"
    prev = _results.get(number)
    if prev is None or prev[1] == "PASS":
        _results[number] = (title, outcome, detail)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        report._criterion = [tuple(marker.args)]


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        title, outcome, detail = _results[number]
        line = f"[{outcome}] criterion {number:>2}: {title}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)
