import numpy as np
import pytest

from pixelground import fixtures
from pixelground.raster import BinaryMask

# filled in by tests/test_acceptance.py; echoed after the test run
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_RESULTS:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)


def random_mask(rng: np.random.Generator, max_h: int = 64, max_w: int = 64,
                density: float = None) -> BinaryMask:
    h = int(rng.integers(1, max_h + 1))
    w = int(rng.integers(1, max_w + 1))
    p = density if density is not None else float(rng.uniform(0.05, 0.95))
    return BinaryMask(rng.random((h, w)) < p)


@pytest.fixture(scope="session")
def fixture_root(tmp_path_factory):
    """Bundled rasters/buildings/scenarios written once per session."""
    root = tmp_path_factory.mktemp("fixtures")
    fixtures.write_all(root)
    return root
