import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_RESULTS: dict[int, tuple[str, str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    if report.when == "call" or (report.when == "setup" and report.skipped):
        status = "PASS" if report.passed else "SKIP" if report.skipped else "FAIL"
        detail = getattr(item, "acceptance_detail", "")
        _RESULTS[number] = (title, status, detail)
    elif report.when == "setup" and report.failed:
        _RESULTS[number] = (title, "FAIL", "setup error")


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        title, status, detail = _RESULTS[number]
        line = f"[{status}] {number:>2}. {title}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)
