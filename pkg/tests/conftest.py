import numpy as np
import pytest

from rgsde.scenario import VolatilitySpec, bang_bang_family, constant_controls, make_uniform_grid


@pytest.fixture
def grid():
    return make_uniform_grid(1.0, 64)


@pytest.fixture
def vol():
    return VolatilitySpec(0.25, 1.0)


@pytest.fixture
def controls(grid, vol):
    return constant_controls(grid, vol) + bang_bang_family(grid, vol, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_LINES = {}


@pytest.fixture
def acceptance_report():
    """Record the one-line verdict of an acceptance criterion."""

    def record(number, title, ok, detail):
        _ACCEPTANCE_LINES[number] = f"[{'PASS' if ok else 'FAIL'}] AC{number:02d} {title}: {detail}"
        print(_ACCEPTANCE_LINES[number])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(_ACCEPTANCE_LINES[n])
