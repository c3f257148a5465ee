import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mmwinr.fit import FitConfig, fit_instance  # noqa: E402
from mmwinr.inr import InrArch  # noqa: E402
from mmwinr.scenarios import regression_item  # noqa: E402


@pytest.fixture(scope="session")
def regression():
    return regression_item()


@pytest.fixture(scope="session")
def regression_fit(regression):
    """The 500-epoch, seed-1 direct fit of the regression cube (shared; ~1 min)."""
    _, _, cube = regression
    params, report = fit_instance(cube, InrArch(n_frames=10), FitConfig(epochs=500, seed=1))
    return params, report


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
