import numpy as np
import pytest

from corrvote.geometry import estimate_normals
from corrvote.synthetic import make_blob


@pytest.fixture(scope="session")
def blob2k():
    """A 2000-point synthetic model with normals (resolution about 3.5 mm)."""
    return estimate_normals(make_blob(2000, seed=0), 0.02)


@pytest.fixture(scope="session")
def blob10k():
    return estimate_normals(make_blob(10000, seed=0), 0.01)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance verdicts, one line per criterion."""
    import sys

    mod = sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
