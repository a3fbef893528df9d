import numpy as np
import pytest

from equiflux.mesh import structured_square


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def square4():
    return structured_square(4, "D")


@pytest.fixture(scope="session")
def unstructured():
    """Perturbed 6x6 square with random diagonals (72 elements)."""
    return structured_square(6, "D", diagonal="random", perturb=0.2, seed=7)


@pytest.fixture(scope="session")
def neumann_square():
    return structured_square(4, "N", diagonal="alternate")


# one pass/fail line per acceptance criterion, printed after the run
_ACCEPTANCE: dict[str, str] = {}


@pytest.fixture
def criterion(request):
    """Record the verdict line of one acceptance criterion.

    Usage: ``criterion("3", ok, "detail")``; the line is printed right away
    and again in the terminal summary.
    """

    def record(number: str, ok: bool, detail: str) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
        _ACCEPTANCE[number] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(_ACCEPTANCE, key=lambda k: int(k)):
            terminalreporter.write_line(_ACCEPTANCE[key])
