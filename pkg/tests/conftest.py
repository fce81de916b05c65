"""Per-criterion verdicts for the acceptance suite.

Tests tagged ``@pytest.mark.acceptance(criterion=N)`` are grouped by N. A
criterion passes when every test in its group passes, is skipped when every
test in its group was skipped, and fails otherwise.
"""
import pytest

_outcomes: dict[int, list[str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or "criterion" not in marker.kwargs:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _outcomes.setdefault(marker.kwargs["criterion"], []).append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_outcomes):
        results = _outcomes[n]
        if all(r == "skipped" for r in results):
            verdict = "SKIP"
        elif all(r in ("passed", "skipped") for r in results):
            verdict = "PASS"
        else:
            verdict = "FAIL"
        terminalreporter.write_line(f"criterion {n}: {verdict}")
