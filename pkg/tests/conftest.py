"""Shared fixtures: expensive reference runs are computed once per session."""

from __future__ import annotations

import time

import pytest

from minerlvrt.engine import SimConfig, run_simulation
from minerlvrt.facility import calibrated_miner_params, fault1_scenario
from minerlvrt.lvrt import DEFAULT_DURATIONS, DEFAULT_RETAINED, OutcomeTable, \
    run_facility_table, sweep_capability
from minerlvrt.signals import Source

_ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture(scope="session")
def miner():
    return calibrated_miner_params()


@pytest.fixture(scope="session")
def nominal_run(miner):
    """One settled supply on the nominal 240 V source, every step recorded."""
    return run_simulation(Source(), [miner], SimConfig(t_end=0.5, record_stride=1))


@pytest.fixture(scope="session")
def default_sweep():
    """The default 4 x 4 x 3 capability sweep with the calibrated supply."""
    return sweep_capability()


@pytest.fixture(scope="session")
def fault1_table():
    """FAULT 1 outcome table, one timed run per cell: (OutcomeTable, {cell: seconds})."""
    retained = DEFAULT_RETAINED[::-1]
    outcomes, timings = {}, {}
    for r in retained:
        for d in DEFAULT_DURATIONS:
            t0 = time.perf_counter()
            outcomes[(r, d)] = run_facility_table(fault1_scenario(), (r,), (d,)).table.cell(r, d)
            timings[(r, d)] = time.perf_counter() - t0
    table = OutcomeTable(retained, DEFAULT_DURATIONS,
                         tuple(tuple(outcomes[(r, d)] for d in DEFAULT_DURATIONS)
                               for r in retained))
    return table, timings


@pytest.fixture
def acceptance():
    """Record one acceptance criterion outcome for the end-of-run report."""

    def record(number: int, name: str, passed: bool, detail: str) -> bool:
        _ACCEPTANCE[number] = (name, bool(passed), detail)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        name, ok, detail = _ACCEPTANCE[n]
        verdict = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d} {verdict}  {name}: {detail}")
