"""Collects acceptance-criterion outcomes and prints one line per criterion."""

import pytest

_OUTCOMES: dict[int, str] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    number, title = marker.args
    details = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    status = "PASS" if report.passed else "FAIL"
    _OUTCOMES[number] = f"criterion {number:>2}  {status}  {title}" + (f"  [{details}]" if details else "")


def pytest_terminal_summary(terminalreporter):
    if _OUTCOMES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_OUTCOMES):
            terminalreporter.write_line(_OUTCOMES[number])
