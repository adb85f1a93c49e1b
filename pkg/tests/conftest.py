import numpy as np
import pytest

from asyncsam.data import generate_gaussian_blobs
from asyncsam.objectives import LogisticObjective, MLPObjective, QuadraticObjective, random_quadratic


@pytest.fixture(scope="session")
def blobs():
    return generate_gaussian_blobs(0, n=200, d=6, k=3)


@pytest.fixture(scope="session")
def mlp(blobs):
    return MLPObjective(blobs, hidden=8)


@pytest.fixture(scope="session")
def logistic(blobs):
    return LogisticObjective(blobs)


@pytest.fixture(scope="session")
def quad():
    return random_quadratic(3, d=8, n=64)


@pytest.fixture
def iso2():
    """1/2 |w|^2 in two dimensions, noise-free."""
    return QuadraticObjective(np.eye(2))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# --------------------------------------------------------- acceptance report

_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records one acceptance line and returns ``ok``."""
    def record(number: int, ok: bool, detail: str) -> bool:
        _ACCEPTANCE[number] = (bool(ok), detail)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
