"""Sag experiments, capability maps, boundaries and reference-table comparison."""

from __future__ import annotations

import json
import math
from dataclasses import replace

import numpy as np
import pytest

from minerlvrt.engine import run_simulation
from minerlvrt.lvrt import (ERROR, REFERENCE_TABLES, RIDE_THROUGH, SAG_ARM_TIME_S, TRIP,
                            CapabilityMap, CapabilityPoint, OutcomeTable, ReferenceMismatchError,
                            SweepGrid, compare_reference, extract_boundary, parse_outcome,
                            reference_table, run_sag_experiment, sag_sim_config, sweep_capability)
from minerlvrt.signals import SagSpec, Source


def _sag(retained, pow_deg, duration):
    return SagSpec(retained, pow_deg, duration, arm_time_s=SAG_ARM_TIME_S)


def _map(outcomes: dict[tuple[float, float], str], pows=(0.0,)) -> CapabilityMap:
    """Synthetic map: every POW angle of a cell gets the given outcome."""
    rs = sorted({k[0] for k in outcomes})
    ds = sorted({k[1] for k in outcomes})
    pts = []
    for (r, d), o in outcomes.items():
        for p in pows:
            pts.append(CapabilityPoint(r, d, p, o, 0.5 if o == TRIP else None, 1.0,
                                       "x" if o == ERROR else None))
    return CapabilityMap(SweepGrid(rs, ds, pows), pts)


def _grid_outcomes(rows: list[str], rs=(0.0, 0.5), ds=(0.01, 0.05)) -> dict:
    """rows[i][j] in {'R', 'T', 'E'} for retained rs[i], duration ds[j]."""
    code = {"R": RIDE_THROUGH, "T": TRIP, "E": ERROR}
    return {(r, d): code[rows[i][j]] for i, r in enumerate(rs) for j, d in enumerate(ds)}


class TestGrid:
    def test_defaults(self):
        g = SweepGrid()
        assert g.size == 48
        assert g.cells()[0] == (0.0, 0.009, 0.0)
        assert g.cells()[1] == (0.0, 0.009, 45.0)

    @pytest.mark.parametrize("kw", [{"retained_fractions": (0.5, 0.25)},
                                    {"retained_fractions": (0.5, 1.5)},
                                    {"durations_s": (0.0, 0.1)},
                                    {"durations_s": ()},
                                    {"pow_angles_deg": (0.0, 0.0)}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SweepGrid(**kw)


class TestPoint:
    def test_trip_needs_time(self):
        with pytest.raises(ValueError):
            CapabilityPoint(0.5, 0.01, 0.0, TRIP)

    def test_ride_through_has_no_time(self):
        with pytest.raises(ValueError):
            CapabilityPoint(0.5, 0.01, 0.0, RIDE_THROUGH, trip_time=0.4)

    def test_error_needs_diagnostic(self):
        with pytest.raises(ValueError):
            CapabilityPoint(0.5, 0.01, 0.0, ERROR)

    def test_unknown_outcome(self):
        with pytest.raises(ValueError):
            CapabilityPoint(0.5, 0.01, 0.0, "maybe")


class TestMapLogic:
    def test_worst_case_over_pow(self):
        g = SweepGrid((0.5,), (0.01,), (0.0, 90.0))
        pts = [CapabilityPoint(0.5, 0.01, 0.0, RIDE_THROUGH),
               CapabilityPoint(0.5, 0.01, 90.0, TRIP, 0.41)]
        m = CapabilityMap(g, pts)
        assert m.worst_case[(0.5, 0.01)] == TRIP
        assert m.pow_sensitive_cells() == [(0.5, 0.01)]

    def test_error_ranks_between(self):
        g = SweepGrid((0.5,), (0.01,), (0.0, 90.0))
        m = CapabilityMap(g, [CapabilityPoint(0.5, 0.01, 0.0, RIDE_THROUGH),
                              CapabilityPoint(0.5, 0.01, 90.0, ERROR, diagnostic="boom")])
        assert m.worst_case[(0.5, 0.01)] == ERROR
        assert m.pow_sensitive_cells() == []
        assert [p.pow_deg for p in m.errors()] == [90.0]

    def test_points_must_cover_grid(self):
        with pytest.raises(ValueError):
            CapabilityMap(SweepGrid((0.5,), (0.01,), (0.0, 90.0)),
                          [CapabilityPoint(0.5, 0.01, 0.0, RIDE_THROUGH)])

    def test_points_reordered_to_grid(self):
        g = SweepGrid((0.0, 0.5), (0.01,), (0.0,))
        m = CapabilityMap(g, [CapabilityPoint(0.5, 0.01, 0.0, RIDE_THROUGH),
                              CapabilityPoint(0.0, 0.01, 0.0, TRIP, 0.4)])
        assert [p.retained_fraction for p in m.points] == [0.0, 0.5]

    def test_monotone_map(self):
        m = _map(_grid_outcomes(["RT", "RR"]))
        assert m.monotonicity_violations() == []

    def test_violation_detected(self):
        # ride-through at 0 % / 50 ms while 50 % / 10 ms trips: deeper and longer survives
        m = _map(_grid_outcomes(["RR", "TR"]))
        assert ((0.0, 0.05), (0.5, 0.01)) in m.monotonicity_violations()

    def test_boundary_empty(self):
        assert extract_boundary(_map(_grid_outcomes(["RR", "RR"]))) == []

    def test_boundary_all_trip(self):
        assert extract_boundary(_map(_grid_outcomes(["TT", "TT"]))) == [(0.0, 0.01), (0.5, 0.01)]

    def test_boundary_staircase(self):
        assert extract_boundary(_map(_grid_outcomes(["TT", "RT"]))) == [(0.0, 0.01), (0.5, 0.05)]

    def test_csv_round_trip(self):
        m = _map(_grid_outcomes(["TE", "RR"]), pows=(0.0, 45.0))
        back = CapabilityMap.from_csv(m.to_csv())
        assert back.points == m.points
        assert back.grid == m.grid
        assert back.to_csv() == m.to_csv()

    def test_summary(self):
        m = _map(_grid_outcomes(["TT", "RT"]))
        d = json.loads(m.summary_json())
        assert d["schema"] == "minerlvrt.capability_summary/1"
        assert d["worst_case"] == [[TRIP, TRIP], [RIDE_THROUGH, TRIP]]
        assert d["boundary"][1] == {"retained_fraction": 0.5, "min_trip_duration_s": 0.05}
        assert d["monotone"] is True


class TestExperiments:
    def test_sim_extended_past_clearing(self):
        sag = SagSpec(0.5, 0.0, 0.1, arm_time_s=0.4)
        cfg = sag_sim_config(sag)
        assert cfg.t_end >= 0.4 + 0.1 + 0.1 - 1e-12

    def test_no_sag_identity(self, miner, nominal_run):
        """Retained 100 %: nothing happens, so the recovery window holds the steady peak."""
        pt = run_sag_experiment(miner, SagSpec(1.0, 0.0, 0.045, arm_time_s=0.4))
        assert pt.outcome == RIDE_THROUGH and pt.trip_time is None
        steady = np.abs(nominal_run.trace.window(0.4, 0.5)["c0.i_in"]).max()
        assert pt.peak_recovery_current <= 1.02 * steady

    def test_shallow_long_sag_rides_through(self, miner):
        assert run_sag_experiment(miner, _sag(0.75, 0.0, 0.1)).outcome == RIDE_THROUGH

    def test_longer_half_voltage_sag_is_more_stressed(self, miner):
        """At 50 % the 45 ms sag drives the trailing-cycle RMS current (the quantity
        the protection watches) higher than the 16 ms sag at every POW angle."""
        free = replace(miner, protection=replace(miner.protection, overcurrent_enabled=False))

        def peak_rms(sag):
            tr = run_simulation(Source(sag=sag), [free], sag_sim_config(sag)).trace
            return tr["c0.i_rms"][tr.index_at(SAG_ARM_TIME_S):].max()

        for pow_deg in (0.0, 45.0, 90.0):
            assert peak_rms(_sag(0.5, pow_deg, 0.045)) > peak_rms(_sag(0.5, pow_deg, 0.016))

    def test_deep_sag_trips(self, miner):
        pt = run_sag_experiment(miner, _sag(0.0, 0.0, 0.015))
        assert pt.outcome == TRIP
        assert 0.4 < pt.trip_time < 0.4 + 1 / 60 + 0.015 + 2 / 60

    def test_degenerate_grid_equals_experiment(self, miner):
        grid = SweepGrid((0.25,), (0.015,), (90.0,))
        m = sweep_capability(miner, grid)
        assert m.points == [run_sag_experiment(miner, _sag(0.25, 90.0, 0.015))]

    def test_unsettled_cell_is_error(self, miner):
        m = sweep_capability(miner, SweepGrid((0.5,), (0.009,), (0.0,)), arm_time_s=0.01)
        (pt,) = m.points
        assert pt.outcome == ERROR
        assert "did not settle" in pt.diagnostic
        assert m.worst_case[(0.5, 0.009)] == ERROR

    def test_parallel_matches_serial(self, miner):
        grid = SweepGrid((0.25, 0.5), (0.015,), (0.0, 90.0))
        assert sweep_capability(miner, grid, jobs=2).points == \
            sweep_capability(miner, grid, jobs=1).points

    def test_default_sweep(self, default_sweep):
        assert default_sweep.grid.size == 48
        assert default_sweep.worst_case[(0.0, 0.015)] == TRIP
        assert default_sweep.worst_case[(0.75, 0.1)] == RIDE_THROUGH
        assert not default_sweep.errors()
        back = CapabilityMap.from_csv(default_sweep.to_csv())
        assert back.points == default_sweep.points


class TestOutcomeTables:
    @pytest.mark.parametrize("text,label", [("NO", "none-trip"), ("YES", "all-trip"),
                                            ("1 / 3 TRIP", "1/3"), ("2/3 trip*", "2/3"),
                                            ("none-trip", "none-trip"), (" all-trip ", "all-trip")])
    def test_parse_outcome(self, text, label):
        assert parse_outcome(text) == label

    def test_parse_outcome_rejects(self):
        with pytest.raises(ValueError):
            parse_outcome("sometimes")

    def test_reference_tables(self):
        t1 = reference_table("fault1")
        assert t1.durations_s == (0.009, 0.015, 0.045, 0.1)
        assert t1.retained_fractions == (0.75, 0.5, 0.25, 0.0)
        assert t1.cell(0.5, 0.045) == "1/3"
        assert t1.cell(0.75, 0.1) == "none-trip"
        assert reference_table("fault2").cell(0.0, 0.009) == "2/3"
        assert set(REFERENCE_TABLES) == {"fault1", "fault2"}
        with pytest.raises(KeyError):
            reference_table("fault3")

    def test_csv_round_trip(self):
        t = reference_table("fault2")
        text = t.to_csv()
        assert text.splitlines()[0] == "retained,9ms,15ms,45ms,100ms"
        assert text.splitlines()[1].startswith("75%,1/3")
        assert OutcomeTable.from_csv(text) == t

    def test_decimal_labels(self):
        t = OutcomeTable.from_csv("r,0.009\n0.5,NO\n")
        assert t.cell(0.5, 0.009) == "none-trip"

    @pytest.mark.parametrize("text", ["retained,9ms\n", "retained,9ms\n50%,NO,NO\n",
                                      "retained,9ms\n50%,maybe\n"])
    def test_malformed(self, text):
        with pytest.raises(ValueError):
            OutcomeTable.from_csv(text)

    def test_identical_tables_match(self):
        t = reference_table("fault1")
        rep = compare_reference(t, t)
        assert rep.match_fraction == 1.0 and not rep.mismatches

    def test_single_difference(self):
        ref = reference_table("fault1")
        rows = [list(r) for r in ref.outcomes]
        rows[1][3] = "2/3"
        sim = OutcomeTable(ref.retained_fractions, ref.durations_s, tuple(map(tuple, rows)))
        rep = compare_reference(sim, ref)
        assert rep.match_fraction == pytest.approx(15 / 16)
        assert rep.mismatches == ((0.5, 0.1, "2/3", "all-trip"),)
        d = rep.to_dict()
        assert d["schema"] == "minerlvrt.comparison/1" and len(d["matches"]) == 15

    def test_row_order_irrelevant(self):
        ref = reference_table("fault1")
        flipped = OutcomeTable(ref.retained_fractions[::-1], ref.durations_s, ref.outcomes[::-1])
        assert compare_reference(flipped, ref).match_fraction == 1.0

    def test_subset(self):
        ref = reference_table("fault1")
        sub = ref.subset((0.5,), (0.045, 0.015))
        assert sub.outcomes == (("1/3", "none-trip"),)
        with pytest.raises(ReferenceMismatchError):
            ref.subset((0.6,), (0.015,))

    def test_label_mismatch(self):
        ref = reference_table("fault1")
        other = OutcomeTable((0.75,), (0.009,), (("none-trip",),))
        with pytest.raises(ReferenceMismatchError):
            compare_reference(other, ref)

    def test_facility_table_vs_reference(self, fault1_table):
        table, _ = fault1_table
        rep = compare_reference(table, reference_table("fault1"))
        matched = {(r, d) for r, d, _ in rep.matches}
        for d in table.durations_s:
            assert (0.75, d) in matched and (0.0, d) in matched
        assert not math.isnan(rep.match_fraction)
