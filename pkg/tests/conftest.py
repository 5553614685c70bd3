import numpy as np
import pytest

from perfclust.core import Dataset


def two_line_data(seed, n_per_line=100, slopes=(2.0, -3.0)):
    """Noiseless points on two lines through the origin; returns (dataset, truth)."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n_per_line * len(slopes))
    truth = np.repeat(np.arange(len(slopes)), n_per_line)
    y = np.asarray(slopes)[truth] * x
    return Dataset(x[:, None], y), truth


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
