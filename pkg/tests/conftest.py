import time

import numpy as np
import pytest

from segscene import data

REFERENCE_SEED = 0


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """A small ToyRooms dataset written to disk: (config, rule, train, test)."""
    cfg = data.ToyRoomsConfig(num_train=40, num_test=20, seed=7)
    rule = data.SceneRule.default(cfg)
    train, test = data.generate(cfg, rule, tmp_path_factory.mktemp("toyrooms"))
    return cfg, rule, train, test


ACCEPTANCE_LINES = []
_SESSION_START = time.perf_counter()


@pytest.fixture
def report():
    """Record one acceptance line; all lines are repeated in the terminal summary."""
    def _report(criterion, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return _report


def pytest_terminal_summary(terminalreporter):
    elapsed = time.perf_counter() - _SESSION_START
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
    terminalreporter.write_line(f"session wall time {elapsed:.1f} s")
