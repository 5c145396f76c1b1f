import os
import time

import pytest

os.environ.setdefault("LAB_THREADS", "1")

_RESULTS: list[tuple[str, bool, float]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_call(item):
    start = time.perf_counter()
    outcome = yield
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        _RESULTS.append((mark.args[0], outcome.excinfo is None, time.perf_counter() - start))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, secs in _RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}  ({secs:.1f}s)")
