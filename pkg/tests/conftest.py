import numpy as np
import pytest

from rsfrailty.graph import build_graph, lattice_graph


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def path4():
    """Four areas in a line: 1-2-3-4."""
    return build_graph(4, [(1, 2), (2, 3), (3, 4)])


@pytest.fixture
def lattice():
    return lattice_graph(5, 4)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_report():
    """Record a one-line verdict for an acceptance criterion."""

    def report(criterion: int, passed: bool, detail: str):
        line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
