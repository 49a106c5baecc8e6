from __future__ import annotations

import numpy as np
import pytest

from hjsys.grid import TorusGrid
from hjsys.model import ModelProblem, eikonal


def well(x, *rest):
    return 1 - np.cos(2 * np.pi * x)


@pytest.fixture
def two_well():
    return ModelProblem((eikonal(f=well), eikonal(f=well)), [[1, -1], [-1, 1]])


@pytest.fixture
def ex49():
    return ModelProblem((eikonal(f=1.0), eikonal(f=3.0)), [[1, -1], [-1, 1]])


@pytest.fixture
def grid64():
    return TorusGrid(1, 64)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion; assert afterwards."""

    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {title}  [{detail}]"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
