"""Per-criterion PASS/FAIL summary for the acceptance suite."""
from __future__ import annotations

import pytest

_RESULTS: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call" and not (rep.when == "setup" and rep.failed):
        return
    number, title = marker.args
    measured = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    status = "PASS" if rep.passed else "FAIL"
    # a criterion with several tests passes only if all of them pass
    prev = _RESULTS.get(number)
    if prev is not None:
        status = "FAIL" if "FAIL" in (prev[0], status) else "PASS"
        measured = "; ".join(m for m in (prev[2], measured) if m)
    _RESULTS[number] = (status, title, measured)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        status, title, measured = _RESULTS[number]
        line = f"{status} criterion {number}: {title}"
        if measured:
            line += f" [{measured}]"
        terminalreporter.write_line(line)
