import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from swdae.cli import load_scenario  # noqa: E402

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_report():
    """Collects one PASS/FAIL line per acceptance criterion."""
    def report(num: int, ok: bool, detail: str) -> None:
        line = f"CRITERION {num:2d}: {'PASS' if ok else 'FAIL'} - {detail}"
        print(line)
        _ACCEPTANCE_LINES.append(line)
    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def ex1():
    return load_scenario("example1").system()


@pytest.fixture(scope="session")
def ex2():
    return load_scenario("example2").system()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
