import numpy as np
import pytest

from dpplab import LegendreBasis, Window, decompose, spectral_kernel

ACCEPTANCE_LINES = []


def record(number: int, name: str, ok: bool, detail: str) -> str:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {name}: {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def unit():
    return Window.interval(0.0, 1.0)


@pytest.fixture
def rank3(unit):
    """Non-projection rank-3 kernel on [0, 1]."""
    k = spectral_kernel([0.7, 0.4, 0.2], LegendreBasis(3, unit))
    return decompose(k, unit, 12)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
