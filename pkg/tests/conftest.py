import numpy as np
import pytest

from tsdml.core import Panel


@pytest.fixture
def small_panel():
    rng = np.random.default_rng(0)
    T = 10
    return Panel(np.arange(T, dtype=float), rng.integers(0, 2, T), rng.standard_normal((T, 3)))


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(number, ok: bool, detail: str) -> bool:
        ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
        print(ACCEPTANCE_LINES[-1])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
