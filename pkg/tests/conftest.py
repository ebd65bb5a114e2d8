import pytest

from lapsim.lap import assign_priorities, compute_equilibrium
from lapsim.model import make_spec


@pytest.fixture
def w1():
    return make_spec([1.4, 0.8], [1.0, 2.0], {(1, 1): 1.0, (1, 2): 0.5, (2, 2): 1.0})


@pytest.fixture
def single():
    return make_spec([0.5], [1.0], {(1, 1): 1.0})


@pytest.fixture
def star():
    return make_spec([2.5], [1.0, 1.0, 1.0], {(1, 1): 1.0, (1, 2): 1.0, (1, 3): 1.0})


@pytest.fixture
def w1_lap(w1):
    pa = assign_priorities(w1)
    return w1, pa, compute_equilibrium(w1, pa)


_VERDICTS = []


@pytest.fixture
def criterion():
    """Record ``(label, passed, detail)`` for the acceptance summary."""
    def record(label, passed, detail=""):
        _VERDICTS.append((label, bool(passed), detail))
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in _VERDICTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}  {detail}")
