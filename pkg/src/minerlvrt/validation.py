"""Cross-module invariant suite behind ``minerlvrt validate``.

Each check runs a small scenario, compares it with an independent
expectation and returns a :class:`CheckResult`.  Tolerances match the ones
the acceptance tests use.
"""

from __future__ import annotations

import cmath
import math
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .converter import ConverterParams, ideal_cpl_current
from .engine import SimConfig, run_simulation
from .facility import calibrated_miner_params
from .network import NetworkModel, TransformerSpec
from .signals import SagSpec, Source, fundamental_phasor, power_metrics, sliding_rms


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def __post_init__(self):
        object.__setattr__(self, "passed", bool(self.passed))

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


def _cycles(tr, t_from: float, frequency: float) -> list[slice]:
    spc = int(round(tr.sample_rate / frequency))
    k0 = tr.index_at(t_from)
    return [slice(k, k + spc) for k in range(k0, len(tr) - spc + 1, spc)]


def steady_state_metrics(params: ConverterParams | None = None, t_end: float = 0.5) -> dict:
    """Settled single-converter operation on the nominal source.

    Returns power factor, the worst per-cycle ``|Vrms*Irms - p_av| / p_av``,
    DC-bus mean and ripple, and the fundamental of the input current against
    the ideal constant-power current.
    """
    params = params or calibrated_miner_params()
    cfg = SimConfig(t_end=t_end, record_stride=1)
    res = run_simulation(Source(), [params], cfg)
    if res.steady_state_time is None:
        raise RuntimeError("nominal run did not settle")
    tr = res.trace
    cyc = _cycles(tr, res.steady_state_time, cfg.frequency)
    v, i = tr["c0.v_term"], tr["c0.i_in"]
    s_err = max(abs(math.sqrt(np.mean(v[c] ** 2) * np.mean(i[c] ** 2)) - params.p_av) / params.p_av
                for c in cyc)
    seg = slice(cyc[0].start, cyc[-1].stop)
    pm = power_metrics(v[seg], i[seg], tr.sample_rate, cfg.frequency)
    v_rms = math.sqrt(np.mean(v[seg] ** 2))
    ideal = ideal_cpl_current(v[seg], v_rms, params)
    f_sim = fundamental_phasor(i[seg], tr.sample_rate, cfg.frequency)
    f_ref = fundamental_phasor(ideal, tr.sample_rate, cfg.frequency)
    vdc = tr["c0.v_dc"]
    ripple = float(np.mean([np.ptp(vdc[c]) for c in cyc]))
    return {
        "settle_time": res.steady_state_time,
        "pf": pm.pf, "leading": pm.leading,
        "cpl_identity_error": s_err,
        "v_dc_mean": float(np.mean(vdc[seg])), "v_dc_ripple_pp": ripple,
        "ripple_target_pp": params.dc_ripple_pp, "v_dc_ref": params.v_dc_ref,
        "fundamental_amplitude_error": abs(abs(f_sim) - abs(f_ref)) / abs(f_ref),
        "fundamental_phase_error_deg": abs(math.degrees(cmath.phase(f_sim / f_ref))),
    }


def energy_balance_error(t_end: float = 0.4) -> float:
    """Worst per-cycle relative energy balance error of a lossless converter.

    Input energy through the rectifier equals stored-energy change plus the
    energy delivered to the DC load, both integrated with the trapezoidal rule.
    """
    params = ConverterParams(series_resistance=0.0, diode_drop=0.0)
    cfg = SimConfig(t_end=t_end, record_stride=1)
    res = run_simulation(Source(), [params], cfg)
    tr = res.trace
    dt = tr.dt
    il, vr, vdc, ild = tr["c0.i_l"], tr["c0.v_rect"], tr["c0.v_dc"], tr["c0.i_load"]
    worst = 0.0
    for c in _cycles(tr, res.steady_state_time or 0.2, cfg.frequency):
        a, b = c.start, min(c.stop, len(tr) - 1)
        p_in, p_out = vr[a:b + 1] * il[a:b + 1], vdc[a:b + 1] * ild[a:b + 1]
        e_in = np.sum(p_in[:-1] + p_in[1:]) * dt / 2
        e_out = np.sum(p_out[:-1] + p_out[1:]) * dt / 2
        d_e = 0.5 * params.inductance * (il[b] ** 2 - il[a] ** 2) + \
            0.5 * params.capacitance * (vdc[b] ** 2 - vdc[a] ** 2)
        worst = max(worst, abs(e_in - e_out - d_e) / e_in)
    return worst


def zero_voltage_current_pu(pow_deg: float = 90.0) -> float:
    """Trailing-cycle RMS input current one cycle after a 0 % sag onset, per unit."""
    params = calibrated_miner_params()
    src = Source(sag=SagSpec(0.0, pow_deg, 0.1, arm_time_s=0.4))
    res = run_simulation(src, [params], SimConfig(t_end=0.52, record_stride=1))
    tr = res.trace
    irms = sliding_rms(tr["c0.i_in"], tr.sample_rate)
    return float(irms[tr.index_at(src.event_window()[0] + 1.0 / 60.0)] / params.rated_input_current)


def network_oracle_error() -> float:
    """Relative error of a simulated RL divider against its hand phasor solution."""
    v_ll, r_line, l_line = 400.0, 0.5, 2e-3
    net = NetworkModel().add_source("s", v_ll).add_line("s", "b", r_line, l_line) \
        .add_load("b", 20e3, 8e3, v_ll)
    res = run_simulation(None, [], SimConfig(t_end=0.2, record_stride=1), net)
    tr = res.trace
    w = 2.0 * math.pi * 60.0
    z_load = v_ll ** 2 / complex(20e3, -8e3)
    expect = v_ll * math.sqrt(2.0 / 3.0) * z_load / (z_load + complex(r_line, w * l_line))
    seg = tr["v.b.a"][tr.index_at(0.1):tr.index_at(0.1 + 5.0 / 60.0)]
    got = fundamental_phasor(seg, tr.sample_rate, 60.0)
    return abs(got - expect) / abs(expect)


def transformer_no_load_volts() -> float:
    """Simulated secondary line-to-neutral RMS of the facility transformer at no load."""
    net = NetworkModel().add_source("hv", 25e3).add_transformer("hv", "lv", TransformerSpec())
    res = run_simulation(None, [], SimConfig(t_end=0.1, record_stride=1), net)
    tr = res.trace
    seg = tr["v.lv.a"][tr.index_at(0.05):]
    return abs(fundamental_phasor(seg, tr.sample_rate, 60.0)) / math.sqrt(2.0)


def manifests_identical() -> bool:
    """Two executions of the same sag scenario give byte-identical manifests."""
    from .cli import ScenarioConfig, execute
    cfg = ScenarioConfig(kind="single", sag=SagSpec(0.5, 45.0, 0.045, arm_time_s=0.4),
                         sim=SimConfig(t_end=0.55))
    texts = []
    with tempfile.TemporaryDirectory() as tmp:
        for k in range(2):
            out = Path(tmp, f"run{k}")
            execute(cfg, out)
            texts.append((out / "manifest.json").read_bytes())
    return texts[0] == texts[1]


def config_round_trips() -> bool:
    from .cli import ScenarioConfig, parse_scenario_text, serialize
    return all(parse_scenario_text(serialize(c)) == c
               for c in (ScenarioConfig(kind=k) for k in ("single", "sweep", "facility")))


def run_invariant_suite(include_sweep: bool = False, jobs: int = 1) -> list[CheckResult]:
    out: list[CheckResult] = []
    m = steady_state_metrics()
    out.append(CheckResult("power_factor", 0.99 <= m["pf"] <= 1.0 and m["leading"],
                           f"pf={m['pf']:.4f} {'leading' if m['leading'] else 'lagging'}"))
    out.append(CheckResult("cpl_identity", m["cpl_identity_error"] < 0.02,
                           f"worst cycle |S - p_av|/p_av = {m['cpl_identity_error']:.4f}"))
    ok_mean = abs(m["v_dc_mean"] - m["v_dc_ref"]) <= 0.01 * m["v_dc_ref"]
    ok_rip = abs(m["v_dc_ripple_pp"] - m["ripple_target_pp"]) <= 0.25 * m["ripple_target_pp"]
    out.append(CheckResult("dc_regulation", ok_mean and ok_rip,
                           f"mean {m['v_dc_mean']:.2f} V, ripple {m['v_dc_ripple_pp']:.2f} V pp "
                           f"(target {m['ripple_target_pp']:.1f})"))
    out.append(CheckResult("cpl_oracle", m["fundamental_amplitude_error"] < 0.05 and
                           m["fundamental_phase_error_deg"] < 5.0,
                           f"amplitude {m['fundamental_amplitude_error']:.4f}, phase "
                           f"{m['fundamental_phase_error_deg']:.2f} deg"))
    e = energy_balance_error()
    out.append(CheckResult("energy_balance", e < 1e-3, f"worst cycle error {e:.2e}"))
    z = zero_voltage_current_pu()
    out.append(CheckResult("zero_voltage", z < 0.01, f"trailing RMS {z:.2e} pu"))
    n = network_oracle_error()
    out.append(CheckResult("network_oracle", n < 0.005, f"relative error {n:.2e}"))
    v2 = transformer_no_load_volts()
    out.append(CheckResult("transformer_no_load", abs(v2 - 415.0 / math.sqrt(3.0)) < 0.005 * 239.6,
                           f"secondary {v2:.2f} V line-to-neutral"))
    out.append(CheckResult("determinism", manifests_identical(), "repeated run manifests"))
    out.append(CheckResult("config_round_trip", config_round_trips(), "parse(serialize(c)) == c"))
    if include_sweep:
        from .lvrt import extract_boundary, sweep_capability
        cmap = sweep_capability(jobs=jobs)
        viol = cmap.monotonicity_violations()
        out.append(CheckResult("sweep_monotone", not viol and not cmap.errors(),
                               f"{len(viol)} violations, {len(cmap.errors())} errors, "
                               f"boundary {extract_boundary(cmap)}"))
        sens = cmap.pow_sensitive_cells()
        out.append(CheckResult("pow_sensitivity", bool(sens), f"cells {sens}"))
    return out
