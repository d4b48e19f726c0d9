import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tmlmc.envs import garnet, recycling_robot  # noqa: E402

# criterion number -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture(scope="session")
def robot():
    return recycling_robot(0.5, 0.5)


@pytest.fixture(scope="session")
def garnet_small():
    return garnet(5, 4, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
