import functools
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from krflow import solver  # noqa: E402
from krflow.config import load_scenario, sample_schedule  # noqa: E402


@functools.lru_cache(maxsize=None)
def scenario_trajectory(name: str) -> solver.Trajectory:
    """Trajectory of a bundled scenario on its own sample schedule (cached per session)."""
    cfg = load_scenario(name)
    return solver.run(cfg.model, cfg.solver, sample_schedule(cfg), cfg.diagnostics.alpha)


@pytest.fixture(scope="session")
def trajectory():
    return scenario_trajectory


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        ok, detail = RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
