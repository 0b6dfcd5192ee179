import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import time

import pytest

from hppinet.pipeline import fit_hierarchy
from hppinet.synth import make_dataset

ACCEPTANCE_WINDOWS = 150


@pytest.fixture(scope="session")
def split150():
    return make_dataset(windows_per_class=ACCEPTANCE_WINDOWS, seed=0)


@pytest.fixture(scope="session")
def small_split():
    return make_dataset(windows_per_class=20, seed=3)


@pytest.fixture(scope="session")
def trained(split150):
    """The three modules trained once per session on the 150-window dataset; .elapsed is the wall time."""
    t0 = time.perf_counter()
    h = fit_hierarchy(split150)
    h.elapsed = time.perf_counter() - t0
    return h


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
