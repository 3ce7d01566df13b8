import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_acceptance: dict[int, tuple[str, str, float]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = "PASS" if report.outcome == "passed" else "FAIL"
        previous = _acceptance.get(number)
        # a criterion split over several tests passes only if all of them do
        if previous is not None and previous[1] == "FAIL":
            status = "FAIL"
        elapsed = report.duration + (previous[2] if previous else 0.0)
        _acceptance[number] = (title, status, elapsed)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        title, status, elapsed = _acceptance[number]
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {title}  ({elapsed:.1f} s)")
