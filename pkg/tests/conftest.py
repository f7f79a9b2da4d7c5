import re

import numpy as np
import pytest

from mocogen.body import load_skeleton
from mocogen.codec import build_palette


@pytest.fixture(scope="session")
def skeleton():
    return load_skeleton()


@pytest.fixture(scope="session")
def palette24():
    return build_palette(24)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(n, ok, detail)`` then assert ``ok``."""
    results = request.config.stash.setdefault(ACCEPTANCE, {})

    def record(n: int, ok: bool, detail: str):
        results[n] = (bool(ok), detail)
        assert ok, f"criterion {n}: {detail}"

    return record


def pytest_runtest_logreport(report):
    # a criterion test that crashed before recording still counts as a failure
    m = re.search(r"test_criterion_(\d+)_", report.nodeid)
    if m and report.failed:
        results = _config.stash.setdefault(ACCEPTANCE, {})
        results.setdefault(int(m.group(1)), (False, f"{report.when} error: {report.longrepr.reprcrash.message if hasattr(report.longrepr, 'reprcrash') else report.outcome}"))


_config = None


def pytest_configure(config):
    global _config
    _config = config


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE, None)
    if not results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in range(1, 11):
        if n not in results:
            terminalreporter.write_line(f"criterion {n:2d}: NOT RUN")
            continue
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
