import os

import pytest
from hypothesis import HealthCheck, settings

from seqmem.temporal_memory import LearningParams, TemporalMemory

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def small_params():
    """A small layer: 64 columns x 4 cells."""
    return LearningParams(n_columns=64, cells_per_column=4)


@pytest.fixture
def small_tm(small_params):
    return TemporalMemory(small_params, seed=0)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
