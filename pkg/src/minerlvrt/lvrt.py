"""Voltage-sag sweeps: capability maps, ride-through boundaries, table comparison.

A single-supply experiment settles one converter on an ideal 240 V source,
applies a rectangular sag that starts at a chosen point on wave and records
whether the protection tripped.  Sweeping retained voltage, sag duration and
starting angle gives a capability map.  The boundary is read from the worst
case over the starting angles.

Facility experiments produce outcome tables over (retained voltage, fault
duration) in the alphabet ``none-trip``, ``1/3``, ``2/3``, ``all-trip``.
Those tables can be compared cell by cell against reference tables.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .converter import ConverterParams
from .engine import SimConfig, SimulationAborted, run_simulation
from .facility import (OUTCOME_LABELS, FacilityScenario, calibrated_miner_params,
                       run_facility_scenario, with_retained)
from .network import NetworkError
from .signals import SagSpec, SineSpec, Source

DEFAULT_RETAINED = (0.0, 0.25, 0.5, 0.75)
DEFAULT_DURATIONS = (0.009, 0.015, 0.045, 0.1)
DEFAULT_POW = (0.0, 45.0, 90.0)

# Sags are armed once the converter has settled from its cold start.
SAG_ARM_TIME_S = 0.4
# Simulated time kept after the sag clears so late recovery trips are seen.
POST_SAG_S = 0.1
RECOVERY_CYCLES = 2

RIDE_THROUGH = "ride-through"
TRIP = "trip"
ERROR = "error"


# ---------------------------------------------------------------------------
# Grid, points and maps
# ---------------------------------------------------------------------------


def _sorted_tuple(name: str, values) -> tuple[float, ...]:
    vals = tuple(float(v) for v in values)
    if not vals:
        raise ValueError(f"{name} must not be empty")
    if any(b <= a for a, b in zip(vals, vals[1:])):
        raise ValueError(f"{name} must be strictly ascending (got {list(vals)})")
    return vals


@dataclass(frozen=True)
class SweepGrid:
    retained_fractions: tuple[float, ...] = DEFAULT_RETAINED
    durations_s: tuple[float, ...] = DEFAULT_DURATIONS
    pow_angles_deg: tuple[float, ...] = DEFAULT_POW

    def __post_init__(self):
        r = _sorted_tuple("retained_fractions", self.retained_fractions)
        d = _sorted_tuple("durations_s", self.durations_s)
        p = tuple(float(a) for a in self.pow_angles_deg)
        if not p:
            raise ValueError("pow_angles_deg must not be empty")
        if len(set(p)) != len(p):
            raise ValueError("pow_angles_deg must be distinct")
        if r[0] < 0 or r[-1] > 1:
            raise ValueError(f"retained_fractions must lie in [0, 1] (got {list(r)})")
        if d[0] <= 0:
            raise ValueError(f"durations_s must be > 0 (got {list(d)})")
        object.__setattr__(self, "retained_fractions", r)
        object.__setattr__(self, "durations_s", d)
        object.__setattr__(self, "pow_angles_deg", p)

    @property
    def size(self) -> int:
        return len(self.retained_fractions) * len(self.durations_s) * len(self.pow_angles_deg)

    def cells(self) -> list[tuple[float, float, float]]:
        """All (retained, duration, pow) triples in row-major order."""
        return [(r, d, p) for r in self.retained_fractions for d in self.durations_s
                for p in self.pow_angles_deg]


@dataclass(frozen=True)
class CapabilityPoint:
    """Outcome of one sag experiment.

    ``outcome`` is ``ride-through`` or ``trip``; a run that could not be
    completed is recorded as ``error`` with a ``diagnostic``.
    """

    retained_fraction: float
    duration_s: float
    pow_deg: float
    outcome: str
    trip_time: float | None = None
    peak_recovery_current: float = math.nan
    diagnostic: str | None = None

    def __post_init__(self):
        if self.outcome not in (RIDE_THROUGH, TRIP, ERROR):
            raise ValueError(f"unknown outcome {self.outcome!r}")
        if (self.trip_time is not None) != (self.outcome == TRIP):
            raise ValueError("trip_time must be given exactly when the outcome is trip")
        if (self.diagnostic is not None) != (self.outcome == ERROR):
            raise ValueError("diagnostic must be given exactly when the outcome is error")

    @property
    def key(self) -> tuple[float, float, float]:
        return (self.retained_fraction, self.duration_s, self.pow_deg)


def _worst(outcomes: Sequence[str]) -> str:
    if TRIP in outcomes:
        return TRIP
    if ERROR in outcomes:
        return ERROR
    return RIDE_THROUGH


@dataclass
class CapabilityMap:
    grid: SweepGrid
    points: list[CapabilityPoint]
    worst_case: dict[tuple[float, float], str] = field(init=False)

    def __post_init__(self):
        by_key = {p.key: p for p in self.points}
        cells = self.grid.cells()
        if len(self.points) != len(cells) or set(by_key) != set(cells):
            raise ValueError("points must cover every grid cell exactly once")
        self.points = [by_key[c] for c in cells]
        self.worst_case = {
            (r, d): _worst([by_key[(r, d, p)].outcome for p in self.grid.pow_angles_deg])
            for r in self.grid.retained_fractions for d in self.grid.durations_s}

    def point(self, retained: float, duration: float, pow_deg: float) -> CapabilityPoint:
        return next(p for p in self.points if p.key == (retained, duration, pow_deg))

    def pow_sensitive_cells(self) -> list[tuple[float, float]]:
        """(retained, duration) cells whose completed outcomes differ across angles."""
        out = []
        for r in self.grid.retained_fractions:
            for d in self.grid.durations_s:
                seen = {self.point(r, d, p).outcome for p in self.grid.pow_angles_deg} - {ERROR}
                if len(seen) > 1:
                    out.append((r, d))
        return out

    def monotonicity_violations(self) -> list[tuple[tuple[float, float], tuple[float, float]]]:
        """Pairs (ride-through cell, trip cell) where the ride-through cell is at
        least as deep and at least as long as the trip cell (worst case over POW)."""
        rides = [k for k, v in self.worst_case.items() if v == RIDE_THROUGH]
        trips = [k for k, v in self.worst_case.items() if v == TRIP]
        return [(a, b) for a in rides for b in trips if a[0] <= b[0] and a[1] >= b[1]]

    def errors(self) -> list[CapabilityPoint]:
        return [p for p in self.points if p.outcome == ERROR]

    # -- export ------------------------------------------------------------

    CSV_COLUMNS = ("retained_fraction", "duration_s", "pow_deg", "outcome", "trip_time_s",
                   "peak_recovery_current_a", "diagnostic")

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_COLUMNS)
        for p in self.points:
            w.writerow([repr(p.retained_fraction), repr(p.duration_s), repr(p.pow_deg), p.outcome,
                        "" if p.trip_time is None else repr(p.trip_time),
                        repr(float(p.peak_recovery_current)), p.diagnostic or ""])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source: str | Path, grid: SweepGrid | None = None) -> CapabilityMap:
        text = Path(source).read_text() if isinstance(source, Path) else source
        rows = list(csv.DictReader(io.StringIO(text)))
        pts = [CapabilityPoint(float(r["retained_fraction"]), float(r["duration_s"]),
                               float(r["pow_deg"]), r["outcome"],
                               float(r["trip_time_s"]) if r["trip_time_s"] else None,
                               float(r["peak_recovery_current_a"]), r["diagnostic"] or None)
               for r in rows]
        if grid is None:
            grid = SweepGrid(sorted({p.retained_fraction for p in pts}),
                             sorted({p.duration_s for p in pts}),
                             list(dict.fromkeys(p.pow_deg for p in pts)))
        return cls(grid, pts)

    def summary_dict(self) -> dict:
        g = self.grid
        return {
            "schema": "minerlvrt.capability_summary/1",
            "grid": {"retained_fractions": list(g.retained_fractions),
                     "durations_s": list(g.durations_s),
                     "pow_angles_deg": list(g.pow_angles_deg)},
            "worst_case": [[self.worst_case[(r, d)] for d in g.durations_s]
                           for r in g.retained_fractions],
            "boundary": [{"retained_fraction": r, "min_trip_duration_s": d}
                         for r, d in extract_boundary(self)],
            "pow_sensitive_cells": [list(c) for c in self.pow_sensitive_cells()],
            "monotone": not self.monotonicity_violations(),
            "errors": [{"cell": list(p.key), "diagnostic": p.diagnostic} for p in self.errors()],
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary_dict(), indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


def sag_sim_config(sag: SagSpec, base: SimConfig | None = None,
                   source: SineSpec | None = None) -> SimConfig:
    """``base`` with ``t_end`` extended to ``POST_SAG_S`` past the sag clearing."""
    base = base or SimConfig()
    t_on = Source(source or SineSpec(frequency=base.frequency), sag).event_window()[0]
    return replace(base, t_end=max(base.t_end, t_on + sag.duration_s + POST_SAG_S))


def run_sag_experiment(params: ConverterParams, sag: SagSpec, sim: SimConfig | None = None,
                       source: SineSpec | None = None) -> CapabilityPoint:
    """One converter on an ideal source through one sag.

    The run is extended, if needed, to ``POST_SAG_S`` after the sag clears.
    ``peak_recovery_current`` is the largest instantaneous input current in
    the ``RECOVERY_CYCLES`` cycles after clearing.  Raises ``RuntimeError`` if
    the converter has not settled before the sag, and propagates
    :class:`SimulationAborted`.
    """
    source = source or SineSpec(rms_volts=params.v_in_rms_nom, frequency=params.frequency)
    src = Source(source, sag)
    sim = sag_sim_config(sag, sim, source)
    res = run_simulation(src, [params], sim)
    t_on, t_off = src.event_window()
    if res.steady_state_time is None or res.steady_state_time >= t_on:
        raise RuntimeError(f"converter did not settle before the sag onset at {t_on:.4f} s")
    tr = res.trace
    i_in = tr["c0.i_in"][tr.index_at(t_off):tr.index_at(t_off + RECOVERY_CYCLES / sim.frequency)]
    peak = float(np.max(np.abs(i_in))) if i_in.size else 0.0
    status = res.trip_statuses["c0"]
    return CapabilityPoint(sag.retained_fraction, sag.duration_s, sag.start_pow_deg,
                           TRIP if status.tripped else RIDE_THROUGH,
                           status.trip_time, peak)


def _cell_job(args) -> CapabilityPoint:
    params, sim, arm, (r, d, p) = args
    try:
        return run_sag_experiment(params, SagSpec(r, p, d, arm_time_s=arm), sim)
    except (SimulationAborted, RuntimeError, FloatingPointError) as exc:
        return CapabilityPoint(r, d, p, ERROR, diagnostic=f"{type(exc).__name__}: {exc}")


def _map_jobs(fn: Callable, jobs_args: list, jobs: int) -> list:
    if jobs <= 1 or len(jobs_args) <= 1:
        return [fn(a) for a in jobs_args]
    with ProcessPoolExecutor(max_workers=min(jobs, len(jobs_args))) as pool:
        return list(pool.map(fn, jobs_args))


def sweep_capability(params: ConverterParams | None = None, grid: SweepGrid | None = None,
                     sim: SimConfig | None = None, jobs: int = 1,
                     arm_time_s: float = SAG_ARM_TIME_S) -> CapabilityMap:
    """Run every grid cell; ``jobs > 1`` runs cells in worker processes.

    Defaults are the calibrated single-miner parameters and the default grid.
    A cell whose run fails is kept in the map as ``error`` with a diagnostic.
    """
    params = params or calibrated_miner_params()
    grid = grid or SweepGrid()
    args = [(params, sim, arm_time_s, cell) for cell in grid.cells()]
    return CapabilityMap(grid, _map_jobs(_cell_job, args, jobs))


def extract_boundary(cmap: CapabilityMap) -> list[tuple[float, float]]:
    """Per retained fraction, the shortest grid duration whose worst case trips."""
    out = []
    for r in cmap.grid.retained_fractions:
        trips = [d for d in cmap.grid.durations_s if cmap.worst_case[(r, d)] == TRIP]
        if trips:
            out.append((r, min(trips)))
    return out


# ---------------------------------------------------------------------------
# Outcome tables
# ---------------------------------------------------------------------------


class ReferenceMismatchError(ValueError):
    """Tables being compared do not share row and column labels."""


_CELL_ALIASES = {"no": "none-trip", "yes": "all-trip", "none-trip": "none-trip",
                 "all-trip": "all-trip", "1/3": "1/3", "2/3": "2/3"}


def parse_outcome(text: str) -> str:
    """Map a table cell (``NO``, ``YES``, ``1 / 3 TRIP*`` or a canonical label)
    to the outcome alphabet.  ``YES`` means every phase tripped."""
    key = re.sub(r"\s+", "", text.strip().lower()).rstrip("*†")
    key = key.replace("trip", "") if key not in ("none-trip", "all-trip") else key
    if key not in _CELL_ALIASES:
        raise ValueError(f"unrecognised outcome cell {text!r}")
    return _CELL_ALIASES[key]


def _parse_duration(label: str) -> float:
    """``09ms`` or ``1 cycle (15ms)`` or ``0.045`` to seconds."""
    m = re.findall(r"(\d+(?:\.\d+)?)\s*ms", label)
    if m:
        return float(m[-1]) / 1000.0
    return float(label)


def _parse_retained(label: str) -> float:
    s = label.strip()
    return float(s[:-1]) / 100.0 if s.endswith("%") else float(s)


def _fmt_duration(d: float) -> str:
    return f"{d * 1000:g}ms"


def _fmt_retained(r: float) -> str:
    return f"{r * 100:g}%"


@dataclass(frozen=True)
class OutcomeTable:
    """Facility outcomes indexed by retained fraction (rows) and duration (columns)."""

    retained_fractions: tuple[float, ...]
    durations_s: tuple[float, ...]
    outcomes: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        r = tuple(float(x) for x in self.retained_fractions)
        d = tuple(float(x) for x in self.durations_s)
        rows = tuple(tuple(row) for row in self.outcomes)
        if len(set(r)) != len(r) or len(set(d)) != len(d):
            raise ValueError("table labels must be distinct")
        if len(rows) != len(r) or any(len(row) != len(d) for row in rows):
            raise ValueError("table shape does not match its labels")
        for row in rows:
            for c in row:
                if c not in OUTCOME_LABELS:
                    raise ValueError(f"outcome {c!r} is not one of {OUTCOME_LABELS}")
        object.__setattr__(self, "retained_fractions", r)
        object.__setattr__(self, "durations_s", d)
        object.__setattr__(self, "outcomes", rows)

    def cell(self, retained: float, duration: float) -> str:
        return self.outcomes[self.retained_fractions.index(retained)][
            self.durations_s.index(duration)]

    def cells(self) -> dict[tuple[float, float], str]:
        return {(r, d): self.cell(r, d) for r in self.retained_fractions for d in self.durations_s}

    def subset(self, retained_fractions, durations_s) -> OutcomeTable:
        """The rows and columns named, in the order given."""
        rs = tuple(float(r) for r in retained_fractions)
        ds = tuple(float(d) for d in durations_s)
        missing = [r for r in rs if r not in self.retained_fractions] + \
            [d for d in ds if d not in self.durations_s]
        if missing:
            raise ReferenceMismatchError(f"labels {missing} are not in the table")
        return OutcomeTable(rs, ds, tuple(tuple(self.cell(r, d) for d in ds) for r in rs))

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["retained", *[_fmt_duration(d) for d in self.durations_s]])
        for r, row in zip(self.retained_fractions, self.outcomes):
            w.writerow([_fmt_retained(r), *row])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source: str | Path) -> OutcomeTable:
        """Read a table whose header row holds duration labels and whose first
        column holds retained-voltage labels (``75%`` or ``0.75``)."""
        text = Path(source).read_text() if isinstance(source, Path) else source
        rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].startswith("#")]
        if len(rows) < 2:
            raise ValueError("outcome table needs a header row and at least one data row")
        durations = [_parse_duration(c) for c in rows[0][1:]]
        retained, outcomes = [], []
        for r in rows[1:]:
            if len(r) != len(durations) + 1:
                raise ValueError(f"row {r[0]!r} has {len(r) - 1} cells, expected {len(durations)}")
            retained.append(_parse_retained(r[0]))
            outcomes.append([parse_outcome(c) for c in r[1:]])
        return cls(tuple(retained), tuple(durations), tuple(map(tuple, outcomes)))


# Laboratory-reported facility outcomes.  "YES" means all miners tripped.
REFERENCE_TABLES = {
    "fault1": """retained,09ms,1 cycle (15ms),3 cycles (45ms),100ms
75%,NO,NO,NO,NO
50%,NO,NO,1 / 3 TRIP,YES
25%,YES,YES,YES,YES
0%,YES,YES,YES,YES
""",
    "fault2": """retained,09ms,1 cycle (15ms),3 cycles (45ms),100ms
75%,1 / 3 TRIP,1 / 3 TRIP,1 / 3 TRIP,1 / 3 TRIP
50%,1 / 3 TRIP,2 / 3 TRIP,2 / 3 TRIP,YES
25%,1 / 3 TRIP,YES,YES,YES
0%,2 / 3 TRIP,YES,YES,YES
""",
}


def reference_table(name: str) -> OutcomeTable:
    if name not in REFERENCE_TABLES:
        raise KeyError(f"unknown reference table {name!r}; known: {sorted(REFERENCE_TABLES)}")
    return OutcomeTable.from_csv(REFERENCE_TABLES[name])


@dataclass(frozen=True)
class MatchReport:
    matches: tuple[tuple[float, float, str], ...]
    mismatches: tuple[tuple[float, float, str, str], ...]  # (r, d, simulated, reference)

    @property
    def match_fraction(self) -> float:
        n = len(self.matches) + len(self.mismatches)
        return len(self.matches) / n if n else 1.0

    def to_dict(self) -> dict:
        return {
            "schema": "minerlvrt.comparison/1",
            "match_fraction": self.match_fraction,
            "matches": [{"retained_fraction": r, "duration_s": d, "outcome": o}
                        for r, d, o in self.matches],
            "mismatches": [{"retained_fraction": r, "duration_s": d, "simulated": s,
                            "reference": ref} for r, d, s, ref in self.mismatches],
        }


def compare_reference(results: OutcomeTable, reference: OutcomeTable) -> MatchReport:
    """Cell-by-cell comparison; both tables must carry the same labels."""
    if set(results.retained_fractions) != set(reference.retained_fractions) or \
            set(results.durations_s) != set(reference.durations_s):
        raise ReferenceMismatchError(
            f"label sets differ: rows {results.retained_fractions} vs "
            f"{reference.retained_fractions}, columns {results.durations_s} vs "
            f"{reference.durations_s}")
    matches, mismatches = [], []
    for r in results.retained_fractions:
        for d in results.durations_s:
            s, ref = results.cell(r, d), reference.cell(r, d)
            if s == ref:
                matches.append((r, d, s))
            else:
                mismatches.append((r, d, s, ref))
    return MatchReport(tuple(matches), tuple(mismatches))


# ---------------------------------------------------------------------------
# Facility tables
# ---------------------------------------------------------------------------


@dataclass
class FacilityTable:
    """Outcome table plus per-cell detail from a facility sweep."""

    table: OutcomeTable
    cells: dict[tuple[float, float], dict]

    def summary_dict(self) -> dict:
        return {
            "schema": "minerlvrt.facility_table/1",
            "retained_fractions": list(self.table.retained_fractions),
            "durations_s": list(self.table.durations_s),
            "outcomes": [list(row) for row in self.table.outcomes],
            "cells": [{"retained_fraction": r, "duration_s": d, **v}
                      for (r, d), v in sorted(self.cells.items())],
        }


def _facility_job(args) -> dict:
    scenario, r, d = args
    try:
        cell_scenario = with_retained(scenario, r, d)
        res = run_facility_scenario(cell_scenario)
    except (SimulationAborted, RuntimeError, NetworkError) as exc:
        return {"outcome": None, "diagnostic": f"{type(exc).__name__}: {exc}"}
    cell = res.summary_dict()
    cell.pop("schema")
    cell["fault_impedance_ohms"] = cell_scenario.fault.impedance_ohms
    return cell


def run_facility_table(scenario: FacilityScenario,
                       retained_fractions: Sequence[float] = DEFAULT_RETAINED[::-1],
                       durations_s: Sequence[float] = DEFAULT_DURATIONS,
                       jobs: int = 1) -> FacilityTable:
    """Run the facility scenario over every (retained, duration) cell.

    The fault impedance of each cell is calibrated so the faulted bus keeps
    the requested fraction of its pre-fault voltage.  Cells that fail raise
    ``RuntimeError`` after all cells have run, naming each failure.
    """
    if scenario.fault is None:
        raise ValueError("scenario has no fault")
    args = [(scenario, float(r), float(d)) for r in retained_fractions for d in durations_s]
    results = _map_jobs(_facility_job, args, jobs)
    failed = [(a[1], a[2], c["diagnostic"]) for a, c in zip(args, results) if c["outcome"] is None]
    if failed:
        raise RuntimeError("facility cells failed: " +
                           "; ".join(f"{r:g}/{d * 1000:g} ms: {msg}" for r, d, msg in failed))
    cells = {(a[1], a[2]): c for a, c in zip(args, results)}
    table = OutcomeTable(tuple(float(r) for r in retained_fractions),
                         tuple(float(d) for d in durations_s),
                         tuple(tuple(cells[(float(r), float(d))]["outcome"] for d in durations_s)
                               for r in retained_fractions))
    return FacilityTable(table, cells)
