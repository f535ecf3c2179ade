import sys

import numpy as np
import pytest
from hypothesis import settings

from rilt.experiments import load_kernel
from rilt.increment_law import default_law

settings.register_profile("rilt", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("rilt")


@pytest.fixture(scope="session")
def law():
    return default_law()


@pytest.fixture(scope="session")
def kernel():
    return load_kernel("default", 64)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)



def pytest_terminal_summary(terminalreporter):
    mod = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    lines = getattr(mod, "LINES", {})
    if lines:
        terminalreporter.section("acceptance")
        for rule in sorted(lines, key=lambda r: int(r[1:])):
            terminalreporter.write_line(lines[rule])
