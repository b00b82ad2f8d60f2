import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fffthermal.mesostructure import build_continuum_grid, coarsen  # noqa: E402
from fffthermal.thermal import ThermalScenario  # noqa: E402


@pytest.fixture(scope="session")
def s1_coarse():
    """The 30x30x20 mm dense block at coarsening factor 5 (13x13x20 cells)."""
    return coarsen(build_continuum_grid(30, 30, 20), 5)


@pytest.fixture(scope="session")
def reference_scenario():
    """Bed 56, room 25, h=25, side air 56, top air 27, 40 min."""
    return ThermalScenario()


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for the end-of-run acceptance summary."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def record(number: int, title: str, ok: bool, detail: str) -> str:
        line = f"[{number:02d}] {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        lines.append(line)
        print(line)
        return line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
