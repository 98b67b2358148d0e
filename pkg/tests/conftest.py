import numpy as np
import pytest

from nabx.fields import BumpField, CoefficientField
from nabx.model import PosteriorContext, PriorSpec, simulate_dataset
from nabx.transport import OdeOptions

# coarse solver settings for tests that do not probe solver accuracy
FAST = OdeOptions(rel_step=1.0 / 64, gauss_nodes=16)


@pytest.fixture(scope="session")
def fast_opts():
    return FAST


@pytest.fixture(scope="session")
def bump2():
    return BumpField(2, [[1.0]])


def random_points(n, seed=0, margin=0.0):
    rng = np.random.default_rng(seed)
    a = rng.uniform(-np.pi / 2 + margin, np.pi / 2 - margin, n)
    b = rng.uniform(0, 2 * np.pi, n)
    return np.stack([a, b], axis=-1)


def small_context(m=2, D=None, N=20, seed=0, noise=1.0, opts=FAST, alpha=6.0):
    from nabx.fields import so_dim

    d_m = so_dim(m)
    D = 6 * d_m if D is None else D
    rng = np.random.default_rng(seed + 100)
    truth = CoefficientField(0.3 * rng.standard_normal(D), m)
    ds = simulate_dataset(truth, N, noise, seed, opts)
    return PosteriorContext(ds, PriorSpec(alpha, N, D, m), opts), truth


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
