import numpy as np
import pytest

from drape.nodes import build_nodes
from drape.scenes import make_test_scene

_CRITERIA = {}


@pytest.fixture(scope="session")
def criterion():
    """Record one acceptance verdict; the summary prints them in order."""
    def record(number, title, passed, detail=""):
        _CRITERIA[number] = (title, bool(passed), detail)
        print(f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}")
        return bool(passed)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, passed, detail = _CRITERIA[number]
        terminalreporter.write_line(f"{number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}")


@pytest.fixture(scope="session")
def sleeve():
    return make_test_scene("capsule-arm-sleeve")


@pytest.fixture(scope="session")
def small_sleeve():
    return make_test_scene("capsule-arm-sleeve", (12, 16))


@pytest.fixture(scope="session")
def sleeve_nodes(sleeve):
    garment, body = sleeve
    return build_nodes(garment, body.skeleton, 32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
