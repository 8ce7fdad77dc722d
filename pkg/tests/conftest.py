"""Collects acceptance results and prints one PASS/FAIL line per criterion."""
from collections import defaultdict

import pytest

_RESULTS = defaultdict(list)   # criterion -> [(test name, outcome, measured)]


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): part of acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        if hasattr(rep, "wasxfail"):
            state = "xpass" if rep.passed else "xfail"
        else:
            state = rep.outcome
        measured = "; ".join(f"{k}={v}" for k, v in rep.user_properties)
        _RESULTS[marker.args[0]].append((item.name, state, measured))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_RESULTS):
        parts = _RESULTS[n]
        ok = all(state in ("passed", "xpass") for _, state, _ in parts)
        tr.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}")
        for name, state, measured in parts:
            tail = f" [{measured}]" if measured else ""
            tr.write_line(f"    {state:7s} {name}{tail}")
