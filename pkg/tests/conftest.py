import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from twobit.coding import encode_2bit
from twobit.region_model import cached_table

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def table075():
    return cached_table(0.75)


def correlated_normals(rho, n, rng):
    x = rng.standard_normal(n)
    y = rho * x + math.sqrt((1 - rho) * (1 + rho)) * rng.standard_normal(n)
    return x, y


def mc_cell_counts(rho, w, n, seed, chunk=4_000_000):
    """Raw 4x4 code-pair counts from n simulated bivariate-normal pairs."""
    rng = np.random.default_rng(seed)
    counts = np.zeros(16, dtype=np.int64)
    done = 0
    while done < n:
        m = min(chunk, n - done)
        x, y = correlated_normals(rho, m, rng)
        cx = encode_2bit(x, w).astype(np.int64)
        cy = encode_2bit(y, w).astype(np.int64)
        counts += np.bincount(4 * cx + cy, minlength=16)
        done += m
    return counts.reshape(4, 4)


def within_se(p_hat, p, n, z=4.0):
    """|p_hat - p| within z binomial standard errors at the reference p."""
    se = math.sqrt(max(p * (1 - p), 1e-300) / n)
    return abs(p_hat - p) <= z * se


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = {}


def record_criterion(number, ok, detail):
    ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
