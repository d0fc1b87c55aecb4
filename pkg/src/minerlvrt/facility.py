"""Mining facility on a three-phase network: aggregation, fault calibration, presets.

Each phase of the facility is one aggregated converter block standing for
``miners_per_phase`` identical supplies on the grounded-wye secondary of a
Δ-Yg transformer.  A three-phase fault applied at one instant hits the three
phases at points on wave 120 degrees apart, which is what makes partial-phase
trip outcomes possible.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field, replace

from .converter import ConverterParams, TripStatus
from .engine import Attachment, RunResult, SimConfig, run_simulation
from .network import (PHASES, FaultSpec, NetworkError, NetworkModel, TransformerSpec,
                      phasor_solve)
from .signals import HarmonicSpec

OUTCOME_LABELS = ("none-trip", "1/3", "2/3", "all-trip")

# Overcurrent threshold, in per unit of rated input RMS current, obtained once
# from ``calibrate_trip_threshold(fault1_scenario())`` at 50 % / 45 ms and frozen
# here so that every run uses the same value.
CALIBRATED_TRIP_PU = 2.923

# Simulated time kept after fault clearing so the recovery inrush is captured.
POST_FAULT_S = 0.1


def outcome_label(n_tripped: int) -> str:
    if not 0 <= n_tripped <= 3:
        raise ValueError(f"tripped phase count must lie in [0, 3] (got {n_tripped})")
    return OUTCOME_LABELS[n_tripped]


def calibrated_miner_params(base: ConverterParams | None = None,
                            trip_pu: float = CALIBRATED_TRIP_PU) -> ConverterParams:
    """Per-miner parameters with the calibrated overcurrent threshold."""
    base = base or ConverterParams()
    return replace(base, protection=replace(base.protection,
                                            i_trip_rms=trip_pu * base.rated_input_current))


@dataclass(frozen=True)
class FacilityScenario:
    """A facility behind a Δ-Yg transformer with one scheduled LLLG fault.

    ``network`` describes the upstream grid and must contain ``pcc_bus``; the
    transformer, the miner bus, the converter attachments and the fault are
    added by :meth:`build_network`.

    Each supply's input (X-) capacitor, ``input_capacitance_f`` in series with
    ``input_damping_ohm``, is aggregated onto the miner bus.  It gives the bus
    a voltage state and damps the switching ripple that the aggregated blocks
    would otherwise drive straight into the transformer leakage inductance.
    """

    network: NetworkModel
    transformer: TransformerSpec = field(default_factory=TransformerSpec)
    miners_per_phase: int = 104
    miner: ConverterParams = field(default_factory=calibrated_miner_params)
    fault: FaultSpec | None = None
    sim: SimConfig = field(default_factory=SimConfig)
    pcc_bus: str = "pcc"
    miner_bus: str = "miners"
    input_capacitance_f: float = 2e-6
    input_damping_ohm: float = 1.0

    def __post_init__(self):
        if int(self.miners_per_phase) != self.miners_per_phase or self.miners_per_phase < 1:
            raise ValueError(f"miners_per_phase must be an integer >= 1 "
                             f"(got {self.miners_per_phase})")
        if self.pcc_bus not in self.network.buses:
            raise NetworkError(f"pcc_bus {self.pcc_bus!r} is not in the network")
        if self.miner_bus in self.network.buses:
            raise NetworkError(f"miner_bus {self.miner_bus!r} must not already be in the network")
        if self.network.faults or self.network.attachments:
            raise NetworkError("the upstream network must not carry faults or attachments")
        if self.fault is not None and self.fault.bus not in (*self.network.buses, self.miner_bus):
            raise NetworkError(f"fault bus {self.fault.bus!r} is not in the facility network")
        if not self.input_capacitance_f > 0 or self.input_damping_ohm < 0:
            raise ValueError("need input_capacitance_f > 0 and input_damping_ohm >= 0")
        if abs(self.miner.frequency - self.network.frequency) > 1e-12 or \
                abs(self.sim.frequency - self.network.frequency) > 1e-12:
            raise ValueError("miner, simulation and network frequencies must agree")

    @property
    def block_params(self) -> ConverterParams:
        return self.miner.aggregate(int(self.miners_per_phase))

    def with_fault(self, fault: FaultSpec | None) -> FacilityScenario:
        return replace(self, fault=fault)

    def build_network(self, include_fault: bool = True) -> NetworkModel:
        net = copy.deepcopy(self.network)
        net.add_transformer(self.pcc_bus, self.miner_bus, self.transformer)
        n = int(self.miners_per_phase)
        net.add_capacitor(self.miner_bus, self.input_capacitance_f * n, self.input_damping_ohm / n)
        net.attach(self.miner_bus)
        if include_fault and self.fault is not None:
            net.add_fault(self.fault)
        return net

    def block_admittance(self) -> float:
        """Constant-impedance conductance of one rated block at nominal voltage."""
        b = self.block_params
        return b.p_av / b.v_in_rms_nom ** 2


# ---------------------------------------------------------------------------
# Fault impedance calibration
# ---------------------------------------------------------------------------


def retained_voltage(scenario: FacilityScenario, impedance_ohms: float,
                     at_bus: str | None = None) -> float:
    """Fundamental during-fault voltage at ``at_bus`` as a fraction of pre-fault.

    Converter blocks are represented by their rated constant-impedance
    equivalent.  ``at_bus`` defaults to the faulted bus.
    """
    if scenario.fault is None:
        raise ValueError("scenario has no fault")
    at_bus = at_bus or scenario.fault.bus
    shunts = {scenario.miner_bus: scenario.block_admittance()}
    pre = phasor_solve(scenario.build_network(include_fault=False), shunts=shunts)
    faulted = scenario.with_fault(replace(scenario.fault, impedance_ohms=impedance_ohms))
    during = phasor_solve(faulted.build_network(), closed=(True,), shunts=shunts)
    return abs(during.voltage(at_bus, "a")) / abs(pre.voltage(at_bus, "a"))


def calibrate_fault_impedance(scenario: FacilityScenario, target_retained_fraction: float,
                              at_bus: str | None = None, rel_tol: float = 1e-4) -> float:
    """Fault resistance giving ``target_retained_fraction`` at ``at_bus``.

    Bisection on ``log(Z)``; retained voltage rises monotonically with the
    fault impedance.  A target of 0 returns 0 (bolted).  Raises
    :class:`NetworkError` if the bolted-fault floor already exceeds the target.
    """
    r = float(target_retained_fraction)
    if not 0.0 <= r < 1.0:
        raise ValueError(f"target_retained_fraction must lie in [0, 1) (got {r})")
    if r == 0.0:
        return 0.0
    floor = retained_voltage(scenario, 0.0, at_bus)
    if floor >= r:
        raise NetworkError(f"target retained fraction {r:.4f} unreachable: "
                           f"bolted-fault floor is {floor:.4f}")
    lo, hi = 1e-9, 1.0
    for _ in range(200):
        if retained_voltage(scenario, hi, at_bus) > r:
            break
        lo, hi = hi, hi * 4.0
    else:  # pragma: no cover - retained voltage tends to 1 as Z grows
        raise NetworkError("could not bracket the fault impedance")
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        val = retained_voltage(scenario, mid, at_bus)
        if abs(val - r) <= rel_tol * r:
            return mid
        if val < r:
            lo = mid
        else:
            hi = mid
    return math.sqrt(lo * hi)


def with_retained(scenario: FacilityScenario, retained_fraction: float, duration_s: float,
                  at_bus: str | None = None) -> FacilityScenario:
    """Copy of ``scenario`` whose fault is calibrated to ``retained_fraction``."""
    if scenario.fault is None:
        raise ValueError("scenario has no fault")
    base = scenario.with_fault(replace(scenario.fault, duration_s=duration_s))
    z = calibrate_fault_impedance(base, retained_fraction, at_bus)
    t_end = max(scenario.sim.t_end, base.fault.clear_time + POST_FAULT_S)
    return replace(base, fault=replace(base.fault, impedance_ohms=z),
                   sim=replace(scenario.sim, t_end=t_end))


# ---------------------------------------------------------------------------
# Coupled runs
# ---------------------------------------------------------------------------


@dataclass
class FacilityResult:
    statuses: dict[str, TripStatus]
    outcome: str
    peak_trailing_rms_pu: dict[str, float]
    run: RunResult
    premises_channels: dict[str, str]
    fault_bus_channels: dict[str, str]

    def __post_init__(self):
        n = sum(s.tripped for s in self.statuses.values())
        if outcome_label(n) != self.outcome:
            raise ValueError("outcome label inconsistent with per-phase statuses")

    @property
    def trace(self):
        return self.run.trace

    def summary_dict(self) -> dict:
        return {
            "schema": "minerlvrt.facility_summary/1",
            "outcome": self.outcome,
            "phases": {ph: {**st.to_dict(), "peak_trailing_rms_pu": self.peak_trailing_rms_pu[ph]}
                       for ph, st in self.statuses.items()},
            "steady_state_time": self.run.steady_state_time,
            "events": [{"time": t, "label": lbl} for t, lbl in self.trace.events],
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary_dict(), indent=2, sort_keys=True)


def block_name(phase: str) -> str:
    return f"phase_{phase}"


def run_facility_scenario(scenario: FacilityScenario) -> FacilityResult:
    """Coupled EMT run of the facility; one aggregated block per phase."""
    net = scenario.build_network()
    block = scenario.block_params
    atts = [Attachment(block, block_name(ph), scenario.miner_bus, ph) for ph in PHASES]
    res = run_simulation(None, atts, scenario.sim, net)
    if scenario.fault is not None:
        if res.steady_state_time is None or res.steady_state_time >= scenario.fault.apply_time:
            raise RuntimeError("facility did not reach steady state before the fault")
    t_from = scenario.fault.apply_time if scenario.fault is not None else 0.0
    k0 = res.trace.index_at(t_from)
    statuses, peaks = {}, {}
    for ph in PHASES:
        nm = block_name(ph)
        statuses[ph] = res.trip_statuses[nm]
        irms = res.trace[f"{nm}.i_rms"][k0:]
        peaks[ph] = float(irms.max() / block.rated_input_current) if irms.size else 0.0
    n = sum(s.tripped for s in statuses.values())
    fault_bus = scenario.fault.bus if scenario.fault is not None else scenario.miner_bus
    return FacilityResult(
        statuses=statuses, outcome=outcome_label(n), peak_trailing_rms_pu=peaks, run=res,
        premises_channels={ph: f"v.{scenario.miner_bus}.{ph}" for ph in PHASES},
        fault_bus_channels={ph: f"v.{fault_bus}.{ph}" for ph in PHASES})


def calibrate_trip_threshold(scenario: FacilityScenario, retained_fraction: float = 0.5,
                             duration_s: float = 0.045) -> float:
    """Overcurrent threshold (per unit of rated current) giving a one-phase trip.

    Runs the calibration cell with overcurrent protection disabled and places
    the threshold midway between the largest and second-largest per-phase peak
    trailing-cycle RMS inductor current.  Because the protected run is
    identical to the unprotected one until the first trip, a threshold in that
    gap trips exactly one phase.  Every step is recorded so the peaks are the
    same values the protection logic compares against the threshold.
    """
    miner = replace(scenario.miner, protection=replace(scenario.miner.protection,
                                                       overcurrent_enabled=False))
    scenario = replace(scenario, miner=miner, sim=replace(scenario.sim, record_stride=1))
    cell = with_retained(scenario, retained_fraction, duration_s)
    peaks = sorted(run_facility_scenario(cell).peak_trailing_rms_pu.values(), reverse=True)
    if peaks[0] - peaks[1] < 1e-3:
        raise RuntimeError(f"no phase separation at the calibration cell (peaks {peaks})")
    return 0.5 * (peaks[0] + peaks[1])


# ---------------------------------------------------------------------------
# Preset systems
# ---------------------------------------------------------------------------


def _rl(z_ohm: float, x_over_r: float, frequency: float) -> tuple[float, float]:
    r = z_ohm / math.sqrt(1.0 + x_over_r ** 2)
    return r, r * x_over_r / (2.0 * math.pi * frequency)


def fault1_network(frequency: float = 60.0, v_ll: float = 25e3, sc_mva: float = 100.0,
                   x_over_r: float = 10.0) -> NetworkModel:
    """Grid Thevenin equivalent (``sc_mva`` short-circuit level) feeding the PCC."""
    r, l = _rl(v_ll ** 2 / (sc_mva * 1e6), x_over_r, frequency)
    return NetworkModel(frequency=frequency).add_source("grid", v_ll).add_line("grid", "pcc", r, l)


def fault2_network(frequency: float = 60.0, v_ll: float = 25e3,
                   harmonics: HarmonicSpec | None = None) -> NetworkModel:
    """Reduced multi-bus system: source bus 1, bus 3 with a harmonic-injecting PV
    equivalent, bus 6 feeding the facility, two 30 MW constant-impedance loads."""
    harmonics = harmonics if harmonics is not None else HarmonicSpec()
    z_line = (0.15, 1.5)  # ohm R, ohm X per line section
    z_pv = (0.3, 3.0)
    w = 2.0 * math.pi * frequency
    net = NetworkModel(frequency=frequency)
    net.add_source("bus1", v_ll)
    net.add_source("pv", v_ll, harmonics=harmonics)
    net.add_line("bus1", "bus3", z_line[0], z_line[1] / w)
    net.add_line("pv", "bus3", z_pv[0], z_pv[1] / w)
    net.add_line("bus3", "pcc", z_line[0], z_line[1] / w)
    net.add_load("bus3", 30e6, 10e6, v_ll)
    net.add_load("pcc", 30e6, 10e6, v_ll)
    return net


def fault1_scenario(duration_s: float = 0.045, impedance_ohms: float = 0.0,
                    apply_time: float = 0.4, miner: ConverterParams | None = None,
                    sim: SimConfig | None = None, miners_per_phase: int = 104) -> FacilityScenario:
    """Fault within the miners' premises (on the transformer secondary)."""
    return FacilityScenario(
        network=fault1_network(), miners_per_phase=miners_per_phase,
        miner=miner or calibrated_miner_params(),
        fault=FaultSpec("miners", impedance_ohms, apply_time, duration_s),
        sim=sim or SimConfig(t_end=apply_time + duration_s + POST_FAULT_S))


def fault2_scenario(duration_s: float = 0.045, impedance_ohms: float = 0.0,
                    apply_time: float = 0.4, miner: ConverterParams | None = None,
                    sim: SimConfig | None = None, miners_per_phase: int = 104) -> FacilityScenario:
    """Fault at bus 3 of the reduced transmission system."""
    return FacilityScenario(
        network=fault2_network(), miners_per_phase=miners_per_phase,
        miner=miner or calibrated_miner_params(),
        fault=FaultSpec("bus3", impedance_ohms, apply_time, duration_s),
        sim=sim or SimConfig(t_end=apply_time + duration_s + POST_FAULT_S))
