"""Acceptance summary: one PASS/FAIL line per criterion at the end of the run."""

import pytest

_OUTCOMES: dict[int, tuple[str, str, str]] = {}
_DETAILS: dict[int, str] = {}


@pytest.fixture
def report(request):
    """Record a measured value for the summary line of the current criterion."""
    marker = request.node.get_closest_marker("criterion")

    def note(text: str) -> None:
        if marker is not None:
            _DETAILS[marker.args[0]] = text

    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n, title = marker.args
    failed = rep.failed or (rep.when == "call" and rep.skipped)
    if rep.when == "call" or failed:
        prev = _OUTCOMES.get(n)
        if prev is None or prev[0] == "PASS":
            _OUTCOMES[n] = ("FAIL" if failed else "PASS", title, rep.when)


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_OUTCOMES):
        verdict, title, _ = _OUTCOMES[n]
        detail = _DETAILS.get(n)
        line = f"criterion {n:2d} [{verdict}] {title}"
        if detail:
            line += f": {detail}"
        terminalreporter.write_line(line)
