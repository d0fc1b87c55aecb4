"""Facility scenarios: fault calibration, coupled runs, presets, trip threshold."""

from __future__ import annotations

import json
import math
from dataclasses import replace

import pytest

from minerlvrt.converter import ConverterParams, TripStatus
from minerlvrt.engine import SimConfig
from minerlvrt.facility import (CALIBRATED_TRIP_PU, OUTCOME_LABELS, FacilityResult,
                                FacilityScenario, calibrate_fault_impedance,
                                calibrate_trip_threshold, calibrated_miner_params, fault1_network,
                                fault1_scenario, fault2_scenario, outcome_label,
                                retained_voltage, run_facility_scenario, with_retained)
from minerlvrt.network import FaultSpec, NetworkError, NetworkModel, phasor_solve


class TestLabels:
    @pytest.mark.parametrize("n,label", list(enumerate(OUTCOME_LABELS)))
    def test_counts(self, n, label):
        assert outcome_label(n) == label

    @pytest.mark.parametrize("n", [-1, 4])
    def test_out_of_range(self, n):
        with pytest.raises(ValueError):
            outcome_label(n)

    def test_calibrated_params(self):
        p = calibrated_miner_params()
        assert p.protection.i_trip_rms == pytest.approx(CALIBRATED_TRIP_PU * p.rated_input_current)
        assert p.p_av == ConverterParams().p_av


class TestScenario:
    def test_build_network(self):
        sc = fault1_scenario()
        net = sc.build_network()
        assert {"grid", "pcc", "miners"} <= set(net.buses)
        assert net.faults == [sc.fault]
        assert len(sc.build_network(include_fault=False).faults) == 0
        # the scenario's own network is not mutated
        assert "miners" not in sc.network.buses

    def test_aggregate_rating(self):
        sc = fault1_scenario()
        assert 3 * sc.block_params.p_av == pytest.approx(3 * 104 * sc.miner.p_av)
        # about 1 MW behind a 1.5 MVA transformer
        assert 0.9e6 < 3 * sc.block_params.p_av < 1.1e6

    def test_pcc_required(self):
        with pytest.raises(NetworkError):
            FacilityScenario(NetworkModel().add_source("g", 25e3), pcc_bus="pcc")

    def test_miner_bus_must_be_new(self):
        with pytest.raises(NetworkError):
            FacilityScenario(fault1_network(), miner_bus="pcc")

    @pytest.mark.parametrize("n", [0, 2.5])
    def test_miner_count(self, n):
        with pytest.raises(ValueError):
            FacilityScenario(fault1_network(), miners_per_phase=n)

    def test_frequency_agreement(self):
        with pytest.raises(ValueError):
            FacilityScenario(fault1_network(), sim=SimConfig(frequency=50.0))


class TestFaultCalibration:
    def test_retained_monotone_in_impedance(self):
        sc = fault1_scenario()
        vals = [retained_voltage(sc, z) for z in (0.0, 0.01, 0.03, 0.1, 1.0)]
        assert vals == sorted(vals)
        assert vals[0] < 1e-3 and vals[-1] > 0.9

    def test_divider_oracle(self):
        """Resistive fault behind a known Thevenin impedance at the PCC."""
        sc = replace(fault1_scenario(), fault=FaultSpec("pcc", 5.0))
        net = sc.build_network(include_fault=False)
        shunts = {sc.miner_bus: sc.block_admittance()}
        # Thevenin impedance seen from the PCC: open-circuit voltage over short-circuit current
        v_oc = phasor_solve(net, shunts=shunts).voltage("pcc")
        bolted = phasor_solve(sc.with_fault(FaultSpec("pcc", 0.0)).build_network(), closed=(True,),
                              shunts=shunts)
        i_sc = bolted.voltage("pcc") / 1e-6
        z_th = v_oc / i_sc
        expect = abs(5.0 / (5.0 + z_th))
        assert retained_voltage(sc, 5.0) == pytest.approx(expect, rel=1e-6)

    @pytest.mark.parametrize("target", [0.25, 0.5, 0.75])
    def test_hits_target(self, target):
        sc = fault1_scenario()
        z = calibrate_fault_impedance(sc, target)
        assert retained_voltage(sc, z) == pytest.approx(target, rel=1e-4)

    def test_zero_is_bolted(self):
        assert calibrate_fault_impedance(fault1_scenario(), 0.0) == 0.0

    def test_floor_unreachable(self):
        """A fault on the miner bus cannot pull the PCC below the source divider floor."""
        with pytest.raises(NetworkError, match="floor"):
            calibrate_fault_impedance(fault1_scenario(), 0.01, at_bus="pcc")

    @pytest.mark.parametrize("target", [-0.1, 1.0])
    def test_target_range(self, target):
        with pytest.raises(ValueError):
            calibrate_fault_impedance(fault1_scenario(), target)

    def test_with_retained_extends_run(self):
        sc = with_retained(fault1_scenario(duration_s=0.009), 0.5, 0.1)
        assert sc.fault.duration_s == 0.1
        assert sc.sim.t_end >= sc.fault.clear_time + 0.1 - 1e-12


class TestCoupledRuns:
    def test_no_fault_rides_through(self):
        sc = replace(fault1_scenario(), fault=None, sim=SimConfig(t_end=0.45))
        res = run_facility_scenario(sc)
        assert res.outcome == "none-trip"
        assert res.run.steady_state_time is not None
        # each block draws its rated power from a ~240 V miner bus
        for ph in "abc":
            assert res.run.summary[f"phase_{ph}"]["p_avg"] == pytest.approx(
                sc.block_params.p_av, rel=0.02)

    def test_deep_fault_trips_all(self):
        res = run_facility_scenario(with_retained(fault1_scenario(), 0.0, 0.015))
        assert res.outcome == "all-trip"
        d = json.loads(res.summary_json())
        assert d["schema"] == "minerlvrt.facility_summary/1"
        assert set(d["phases"]) == {"a", "b", "c"}
        assert all(p["state"] == "tripped" for p in d["phases"].values())
        labels = [e["label"] for e in d["events"]]
        assert labels[0] == "fault_apply:miners"
        assert sum(lbl.startswith("trip:") for lbl in labels) == 3

    def test_result_consistency_checked(self):
        ok = TripStatus()
        with pytest.raises(ValueError):
            FacilityResult({"a": ok, "b": ok, "c": ok}, "1/3", {}, None, {}, {})

    def test_fault2_preset_runs(self):
        res = run_facility_scenario(with_retained(fault2_scenario(), 0.75, 0.009))
        assert res.outcome in OUTCOME_LABELS
        assert res.fault_bus_channels["a"] == "v.bus3.a"


class TestThreshold:
    def test_frozen_threshold_reproduces_calibration(self):
        assert calibrate_trip_threshold(fault1_scenario()) == pytest.approx(
            CALIBRATED_TRIP_PU, abs=1e-3)

    def test_facility_boundary_at_half_voltage(self, fault1_table):
        """At 50 % retained the shortest tripping duration lies in (15, 45] ms."""
        table, _ = fault1_table
        row = {d: table.cell(0.5, d) for d in table.durations_s}
        trips = [d for d, o in sorted(row.items()) if o != "none-trip"]
        assert trips and 0.015 < trips[0] <= 0.045
        assert math.isclose(trips[0], 0.045)
