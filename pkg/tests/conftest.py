import sys

import numpy as np
import pytest


def random_weights(rng, N, density=0.7):
    W = rng.uniform(0, 1, size=(N, N)) * (rng.uniform(size=(N, N)) < density)
    W = np.triu(W, 1)
    return W + W.T


def random_records(rng, N, p, cycles, M=None):
    """Monitoring log of ``cycles`` rounds, each observing ``M`` random units."""
    M = M or max(1, N // 2)
    records = []
    for _ in range(cycles):
        for unit in np.sort(rng.choice(N, size=M, replace=False)):
            records.append((int(unit), rng.standard_normal(p), float(rng.standard_normal())))
    return records


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in range(1, 11):
        entry = module.RESULTS.get(number)
        if entry is None:
            terminalreporter.write_line(f"[FAIL] criterion {number}: not run or errored")
            continue
        title, passed, detail = entry
        terminalreporter.write_line(
            f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title}: {detail}")
