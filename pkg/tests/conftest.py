import time

import numpy as np
import pytest

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "states": [], "seconds": 0.0})
    entry["seconds"] += rep.duration
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        entry["states"].append(rep.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        states = entry["states"]
        if "failed" in states:
            verdict = "FAIL"
        elif "skipped" in states:
            verdict = "SKIP"
        else:
            verdict = "PASS"
        terminalreporter.write_line(
            f"[{verdict}] criterion {number}: {entry['title']} ({entry['seconds']:.1f}s)"
        )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def stopwatch():
    start = time.perf_counter()
    return lambda: time.perf_counter() - start
