import numpy as np
import pytest


def random_instance(seed, d=None, n=None, r=None, p=None, density=0.7):
    """Random nonnegative X with positive factors and a sparse nonnegative S."""
    rng = np.random.default_rng(seed)
    d = d or int(rng.integers(2, 31))
    n = n or int(rng.integers(2, 41))
    r = r or int(rng.integers(1, 7))
    p = p or int(rng.integers(1, 4))
    X = rng.random((d, n)) * 3 * (rng.random((d, n)) < density)
    V = 0.1 + rng.random((d, r))
    H = 0.1 + rng.random((r, n))
    m = int(rng.integers(1, n + 1))
    S = np.zeros((n, 2 * p))
    S[:m] = rng.random((m, 2 * p)) * (rng.random((m, 2 * p)) < 0.5)
    return X, V, H, S


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    module = __import__("sys").modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
