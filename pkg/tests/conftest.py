import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("ccg", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ccg")

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def oracles():
    return json.loads((DATA / "oracles.json").read_text())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_VERDICTS = pytest.StashKey[dict]()


@pytest.fixture
def verdict(request):
    """Record the pass/fail line of a test marked ``@pytest.mark.criterion(n, title)``.

    Lines are printed together in the run summary. A test that raises
    before recording still gets a FAIL line.
    """
    number, title = request.node.get_closest_marker("criterion").args
    store = request.config.stash.setdefault(_VERDICTS, {})

    def record(ok, detail):
        store[number] = f"AC{number:<2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        return ok

    yield record
    store.setdefault(number, f"AC{number:<2d} FAIL  {title}: raised before a verdict")


def pytest_terminal_summary(terminalreporter, config):
    store = config.stash.get(_VERDICTS, {})
    if store:
        terminalreporter.section("acceptance criteria")
        for number in sorted(store):
            terminalreporter.write_line(store[number])
