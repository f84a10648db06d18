import numpy as np
import pytest

from spatial_pmle.model import Dataset


def central_diff(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def random_dataset(rng, n, p, scale=1.0):
    X = rng.uniform(-0.5, 0.5, (n, p))
    P = rng.uniform(0.5, 3.0, n)
    A = rng.uniform(0.5, 2.0, n)
    beta = rng.normal(0, scale, p)
    lam = A * P * np.exp(rng.normal(0, 0.5, n) + X @ beta)
    y = rng.poisson(lam)
    return Dataset(y, P, A, X)


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)


# one line per acceptance criterion, shown at the end of the run
ACCEPTANCE = {}


def record(number, ok, detail=""):
    ACCEPTANCE[number] = (bool(ok), detail)
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
