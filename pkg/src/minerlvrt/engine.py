"""Fixed-step lockstep simulation of sources, converter blocks and an optional network.

Per step ``n`` (time ``t = n*dt``), in this fixed order:

1. known node voltages are taken from the precomputed source waveforms;
2. each converter runs its controller on the terminal voltage sampled at the
   previous step, which fixes the gate and makes its power stage affine in
   the rectified voltage for this step;
3. the network is solved without converters, then every converter terminal
   is solved simultaneously with its diode-bridge relation against the
   network's Thevenin resistance (Gauss-Seidel over blocks), and the RL/RC
   branch histories are advanced;
4. each converter advances its power stage, RMS windows and protection.

Converters only interact through the network solve, so registration order
never changes a converter's trace.

Recording is decimated by ``record_stride``; decimation never feeds back into
the simulation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from . import converter as cv
from .converter import ConverterParams, ConverterState, TripStatus
from .network import NetworkModel, assemble_companion, initialize_history, \
    phasor_solve, source_waveforms
from .signals import Source, power_metrics
from .trace import Trace


class SimulationAborted(RuntimeError):
    """Raised when any state becomes non-finite; carries the time and channel."""

    def __init__(self, time: float, channel: str):
        super().__init__(f"non-finite state in {channel!r} at t={time:.9g} s")
        self.time = time
        self.channel = channel


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-6
    t_end: float = 0.5
    record_stride: int = 10
    settle_tolerance: float = 1e-3
    arming_time_s: float | None = None  # None: three fundamental cycles
    frequency: float = 60.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0 (got {self.dt})")
        if not self.t_end > self.dt:
            raise ValueError(f"t_end must exceed dt (got {self.t_end})")
        if int(self.record_stride) != self.record_stride or self.record_stride < 1:
            raise ValueError(f"record_stride must be an integer >= 1 (got {self.record_stride})")
        if not self.settle_tolerance > 0:
            raise ValueError("settle_tolerance must be > 0")
        if self.arming_time_s is not None and self.arming_time_s < 0:
            raise ValueError("arming_time_s must be >= 0")
        if not self.frequency > 0:
            raise ValueError("frequency must be > 0")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def arming_time(self) -> float:
        return 3.0 / self.frequency if self.arming_time_s is None else self.arming_time_s


@dataclass(frozen=True)
class Attachment:
    """A converter block and where it connects.

    ``bus``/``phase`` name a network node; both are ignored for ideal-source runs.
    """

    params: ConverterParams
    name: str | None = None
    bus: str | None = None
    phase: str = "a"


@dataclass
class RunResult:
    trace: Trace
    trip_statuses: dict[str, TripStatus]
    steady_state_time: float | None
    summary: dict[str, dict]
    final_states: dict[str, ConverterState] = field(default_factory=dict, repr=False)

    def summary_dict(self) -> dict:
        """JSON-ready run summary (schema documented in the README)."""
        return {
            "schema": "minerlvrt.run_summary/1",
            "steady_state_time": self.steady_state_time,
            "trips": {k: v.to_dict() for k, v in self.trip_statuses.items()},
            "converters": self.summary,
            "events": [{"time": t, "label": lbl} for t, lbl in self.trace.events],
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary_dict(), indent=2, sort_keys=True)


# channels recorded per converter, in kernel column order
CONVERTER_CHANNELS = ("v_term", "i_in", "i_l", "v_dc", "i_rms", "v_rms_est", "p_cmd", "i_ref",
                      "duty", "gate", "v_rect", "i_load", "tripped")
_CH_SLOTS = np.array([cv.S_VTERM, cv.S_IIN, cv.S_IL, cv.S_VDC, cv.S_IRMS, cv.S_VRMS, cv.S_KCMD,
                      cv.S_IREF, cv.S_DUTY, cv.S_GATE, cv.S_VRECT, cv.S_ILOAD, cv.S_TRIPPED],
                     dtype=np.int64)


@njit(cache=True)
def _simulate(n_steps, dt, src, sw_node, sw_g, sw_apply, sw_cmd, sw_force, sw_open, g_inv, g_uk,
              br_idx, br_coef, br_g, br_gh, br_amr, br_h, c_par, c_st, c_ibuf, c_vbuf, c_node,
              stride, rec_nodes, rec_v, rec_c, slots):
    nk = src.shape[0]
    nu = g_inv.shape[1]
    nb = br_g.shape[0]
    nc = c_par.shape[0]
    nn = nk + nu
    v = np.zeros(nn)
    rhs = np.zeros(nu)
    v0 = np.zeros(nu)
    active = np.zeros(nc, dtype=np.bool_)
    alpha = np.zeros(nc)
    beta = np.zeros(nc)
    i_c = np.zeros(nc)
    v_c = np.zeros(nc)
    u_c = np.zeros(nc)
    for c in range(nc):
        i_c[c] = c_st[c, cv.S_IIN]
    ns = sw_node.shape[0]
    sw_state = np.zeros(ns, dtype=np.int64)  # 0 not yet applied, 1 closed, 2 opened
    sw_iprev = np.zeros(ns)
    r = 0
    for n in range(n_steps):
        for k in range(nk):
            v[k] = src[k, n]
        # 1. converter control (previous terminal sample) and power-stage coefficients
        for c in range(nc):
            a_, al, be = cv.converter_begin(c_par[c], c_st[c], dt)
            active[c] = a_
            alpha[c] = al
            beta[c] = be
        # 2. switch topology, then converter-free node voltages
        tp = 0
        for k in range(ns):
            if sw_state[k] == 0 and n >= sw_apply[k]:
                sw_state[k] = 1
            if sw_state[k] == 1:
                tp += 1 << k
        if nu > 0:
            for k in range(nu):
                rhs[k] = 0.0
            for b in range(nb):
                for j in range(3):
                    k = br_idx[b, j]
                    if k >= nk:
                        rhs[k - nk] -= br_coef[b, j] * br_h[b]
            for k in range(nu):
                acc = rhs[k]
                for m in range(nk):
                    acc -= g_uk[tp, k, m] * v[m]
                rhs[k] = acc
            for k in range(nu):
                acc = 0.0
                for m in range(nu):
                    acc += g_inv[tp, k, m] * rhs[m]
                v0[k] = acc
        # 3. simultaneous terminal solve (Gauss-Seidel over converter blocks)
        for it in range(200):
            delta = 0.0
            scale = 1.0
            for c in range(nc):
                kc = c_node[c]
                if kc < nk:
                    w_c = v[kc]
                    z_c = 0.0
                else:
                    ku = kc - nk
                    w_c = v0[ku]
                    for c2 in range(nc):
                        k2 = c_node[c2]
                        if c2 != c and k2 >= nk:
                            w_c -= g_inv[tp, ku, k2 - nk] * i_c[c2]
                    z_c = g_inv[tp, ku, ku]
                vv, ii, uu = cv.terminal_solve(w_c, z_c, active[c], c_st[c, cv.S_IL], alpha[c],
                                               beta[c], 2.0 * c_par[c, cv.P_DIODE])
                d = abs(ii - i_c[c])
                if d > delta:
                    delta = d
                if abs(ii) > scale:
                    scale = abs(ii)
                i_c[c] = ii
                v_c[c] = vv
                u_c[c] = uu
            if delta <= 1e-12 * scale:
                break
        # 4. superpose converter draws, check, advance branch histories
        if nu > 0:
            for k in range(nu):
                acc = v0[k]
                for c in range(nc):
                    kc = c_node[c]
                    if kc >= nk:
                        acc -= g_inv[tp, k, kc - nk] * i_c[c]
                if not math.isfinite(acc):
                    return 2, n, k + nk
                v[nk + k] = acc
            for b in range(nb):
                vb = 0.0
                for j in range(3):
                    k = br_idx[b, j]
                    if k >= 0:
                        vb += br_coef[b, j] * v[k]
                ib = br_g[b] * vb + br_h[b]
                br_h[b] = br_gh[b] * (vb + br_amr[b] * ib)
            # a commanded switch opens at its first current zero
            for k in range(ns):
                if sw_state[k] == 1:
                    i_sw = sw_g[k] * v[sw_node[k]]
                    if n >= sw_cmd[k] and (i_sw * sw_iprev[k] <= 0.0 or n >= sw_force[k]):
                        sw_state[k] = 2
                        sw_open[k] = n + 1
                    sw_iprev[k] = i_sw
        # 5. converter power stage, RMS windows and protection
        for c in range(nc):
            err = cv.converter_finish(c_par[c], c_st[c], c_ibuf[c], c_vbuf[c], v_c[c], u_c[c],
                                      i_c[c], dt)
            if err != 0:
                return 1, n, c
        if n % stride == 0:
            for k in range(rec_nodes.shape[0]):
                rec_v[r, k] = v[rec_nodes[k]]
            for c in range(nc):
                for j in range(slots.shape[0]):
                    rec_c[r, c, j] = c_st[c, slots[j]]
            r += 1
    return 0, n_steps, -1


def _step_at(t: float, dt: float) -> int:
    """First step index whose time is at or after ``t``."""
    return int(math.ceil(t / dt - 1e-9))


def _as_attachments(converters) -> list[Attachment]:
    out = []
    for k, c in enumerate(converters):
        a = c if isinstance(c, Attachment) else Attachment(c)
        if a.name is None:
            a = Attachment(a.params, f"c{k}", a.bus, a.phase)
        out.append(a)
    names = [a.name for a in out]
    if len(set(names)) != len(names):
        raise ValueError(f"converter names must be unique: {names}")
    return out


def run_simulation(source: Source | None, converters: Sequence[ConverterParams | Attachment],
                   config: SimConfig, network: NetworkModel | None = None, *,
                   initial_states: dict[str, ConverterState] | None = None) -> RunResult:
    """Run one deterministic simulation.

    Without a network every converter sees ``source`` directly.  With a
    network, ``source`` must be ``None``; the network's sources drive it, its
    faults are scheduled from their ``FaultSpec`` times, and each attachment
    names the bus and phase it draws from.
    """
    atts = _as_attachments(converters)
    dt = config.dt
    n = config.n_steps
    t = np.arange(n) * dt
    events: list[tuple[float, str]] = []

    for a in atts:
        if abs(a.params.frequency - config.frequency) > 1e-12:
            raise ValueError(f"{a.name}: converter frequency differs from the run frequency")
        if dt > 1.0 / (20.0 * a.params.f_switch) * (1 + 1e-9):
            raise ValueError(f"{a.name}: dt must give at least 20 steps per carrier period")

    if network is None:
        if source is None:
            raise ValueError("an ideal-source run needs a source")
        if abs(source.sine.frequency - config.frequency) > 1e-12:
            raise ValueError("source frequency differs from the run frequency")
        src = source.waveform(t)[None, :]
        sw_node = np.zeros(0, dtype=np.int64)
        sw_g = np.zeros(0)
        sw_apply = np.zeros(0, dtype=np.int64)
        sw_cmd = np.zeros(0, dtype=np.int64)
        g_inv = np.zeros((1, 0, 0))
        g_uk = np.zeros((1, 0, 1))
        br_idx = -np.ones((0, 3), dtype=np.int64)
        br_coef = np.zeros((0, 3))
        br_g = np.zeros(0)
        br_gh = np.zeros(0)
        br_amr = np.zeros(0)
        br_h = np.zeros(0)
        c_node = np.zeros(len(atts), dtype=np.int64)
        node_names = ["v_src"]
        rec_nodes = np.array([0], dtype=np.int64)
        win = source.event_window()
        if win is not None:
            events += [(win[0], "sag_onset"), (win[1], "sag_clear")]
        system = None
    else:
        if source is not None:
            raise ValueError("network runs take their sources from the network")
        system = assemble_companion(network, dt)
        # converter blocks as constant-impedance equivalents for initial conditions
        shunts: dict[tuple[str, str], float] = {}
        for a in atts:
            if a.bus is None:
                raise ValueError(f"{a.name}: network attachment needs a bus")
            key = (a.bus, a.phase)
            shunts[key] = shunts.get(key, 0.0) + a.params.p_av / a.params.v_in_rms_nom ** 2
        sol = phasor_solve(network, shunts=shunts)
        initialize_history(system, sol)
        fault_window = None
        sw_apply, sw_cmd = [], []
        for f in network.faults:
            events.append((f.apply_time, f"fault_apply:{f.bus}"))
            sw_apply += [_step_at(f.apply_time, dt)] * 3
            sw_cmd += [_step_at(f.clear_time, dt)] * 3
            if fault_window is None:
                fault_window = (f.apply_time, f.clear_time)
        sw_node, sw_g = system.switch_node, system.switch_g
        sw_apply = np.array(sw_apply, dtype=np.int64)
        sw_cmd = np.array(sw_cmd, dtype=np.int64)
        src = source_waveforms(network, system.nodes, system.n_known, t, fault_window)
        g_inv, g_uk = system.g_uu_inv, system.g_uk
        if system.n_known == 0:
            raise ValueError("network has no source nodes")
        br_idx, br_coef = system.br_idx, system.br_coef
        br_g, br_gh, br_amr = system.br_g, system.br_gh, system.br_amr
        br_h = system.h.copy()
        c_node = np.array([system.node_index(a.bus, a.phase) for a in atts], dtype=np.int64)
        node_names = [f"v.{nm}" for nm in system.nodes]
        rec_nodes = np.arange(len(system.nodes), dtype=np.int64)

    states = []
    for a in atts:
        if initial_states and a.name in initial_states:
            states.append(initial_states[a.name].copy())
        else:
            v0 = None
            if system is not None:
                v0 = abs(sol.voltage(a.bus, a.phase)) / math.sqrt(2.0)
            states.append(ConverterState.initial(a.params, dt, v_rms0=v0))
    nc = len(atts)
    w = cv.window_samples(config.frequency, dt)
    c_par = np.array([a.params.to_array(config.arming_time) for a in atts]).reshape(nc, cv.N_PARAMS)
    c_st = np.array([s.s for s in states]).reshape(nc, cv.N_STATE)
    c_ibuf = np.array([s.ibuf for s in states]).reshape(nc, w)
    c_vbuf = np.array([s.vbuf for s in states]).reshape(nc, w)

    stride = int(config.record_stride)
    n_rec = (n + stride - 1) // stride
    rec_v = np.zeros((n_rec, rec_nodes.size))
    rec_c = np.zeros((n_rec, nc, _CH_SLOTS.size))
    # a switch that finds no current zero within a cycle of its command is forced open
    sw_force = sw_cmd + int(round(1.0 / (config.frequency * dt)))
    sw_open = -np.ones(sw_node.size, dtype=np.int64)
    code, step, where = _simulate(n, dt, src, sw_node, sw_g, sw_apply, sw_cmd, sw_force, sw_open,
                                  g_inv, g_uk, br_idx, br_coef, br_g, br_gh, br_amr, br_h,
                                  c_par, c_st, c_ibuf, c_vbuf, c_node, stride, rec_nodes,
                                  rec_v, rec_c, _CH_SLOTS)
    if code == 1:
        raise SimulationAborted(step * dt, f"{atts[where].name}.state")
    if code == 2:
        raise SimulationAborted(step * dt, node_names[where])

    if network is not None:
        for k, step_open in enumerate(sw_open):
            if step_open >= 0:
                f = network.faults[k // 3]
                events.append((step_open * dt, f"fault_clear:{f.bus}.{'abc'[k % 3]}"))
    channels: dict[str, np.ndarray] = {}
    for k, nm in enumerate(node_names):
        channels[nm] = rec_v[:, k]
    for c, a in enumerate(atts):
        for j, ch in enumerate(CONVERTER_CHANNELS):
            channels[f"{a.name}.{ch}"] = rec_c[:, c, j]

    final = {}
    trips = {}
    for c, a in enumerate(atts):
        st = ConverterState(c_st[c].copy(), c_ibuf[c].copy(), c_vbuf[c].copy())
        final[a.name] = st
        trips[a.name] = st.trip
        if st.trip.tripped:
            events.append((st.trip.trip_time, f"trip:{a.name}:{st.trip.cause.value}"))
    trace = Trace(1.0 / (dt * stride), channels, events)

    names = [a.name for a in atts]
    settle = None
    if names:
        times = [detect_steady_state(trace, config, channel=f"{nm}.v_dc") for nm in names]
        settle = None if any(x is None for x in times) else max(times)
    summary = {nm: _summarize(trace, nm, settle, config) for nm in names}
    return RunResult(trace, trips, settle, summary, final)


def _summarize(trace: Trace, name: str, settle: float | None, config: SimConfig) -> dict:
    """pf, mean power and DC-bus statistics over whole cycles after settling and
    before any event."""
    empty = {"pf": None, "leading": None, "p_avg": None, "v_dc_mean": None, "v_dc_ripple": None,
             "window": None}
    if settle is None:
        return empty
    t_stop = min([e[0] for e in trace.events] + [trace.time[-1] + trace.dt])
    period = 1.0 / config.frequency
    ncyc = int((t_stop - settle) / period + 1e-9)
    if ncyc < 1:
        return empty
    t_start = t_stop - ncyc * period
    seg = trace.window(t_start, t_stop)
    v, i, vdc = seg[f"{name}.v_term"], seg[f"{name}.i_in"], seg[f"{name}.v_dc"]
    try:
        pm = power_metrics(v, i, trace.sample_rate, config.frequency)
        pf, lead, p = pm.pf, pm.leading, pm.p
    except ZeroDivisionError:
        pf, lead, p = None, None, 0.0
    spc = int(round(trace.sample_rate / config.frequency))
    ripple = float(np.mean([np.ptp(vdc[k * spc:(k + 1) * spc]) for k in range(ncyc)
                            if (k + 1) * spc <= vdc.size] or [np.ptp(vdc)]))
    return {"pf": pf, "leading": lead, "p_avg": p, "v_dc_mean": float(np.mean(vdc)),
            "v_dc_ripple": ripple, "window": [t_start, t_stop]}


def cycle_means(x: np.ndarray, sample_rate: float, frequency: float) -> np.ndarray:
    spc = sample_rate / frequency
    ncyc = int(x.size / spc + 1e-9)
    edges = np.round(np.arange(ncyc + 1) * spc).astype(int)
    return np.array([x[edges[k]:edges[k + 1]].mean() for k in range(ncyc)])


def detect_steady_state(trace: Trace, config: SimConfig, channel: str | None = None,
                        n_cycles: int = 5) -> float | None:
    """Earliest cycle start after which ``n_cycles`` consecutive cycle means of the
    DC-bus voltage stay within ``settle_tolerance`` (relative); ``None`` if never.

    The search stops at the first recorded event so that a sag or fault is
    never mistaken for part of the settled window.
    """
    if channel is None:
        cands = [k for k in trace.channels if k == "v_dc" or k.endswith(".v_dc")]
        if not cands:
            raise KeyError("trace has no v_dc channel")
        channel = cands[0]
    x = trace[channel]
    if trace.events:
        x = x[:trace.index_at(trace.events[0][0])]
    means = cycle_means(x, trace.sample_rate, config.frequency)
    spc = trace.sample_rate / config.frequency
    for k in range(means.size - n_cycles + 1):
        blk = means[k:k + n_cycles]
        ref = abs(blk.mean())
        if ref == 0.0:
            if np.ptp(blk) == 0.0:
                return trace.t0 + round(k * spc) / trace.sample_rate
            continue
        if np.ptp(blk) / ref < config.settle_tolerance:
            return trace.t0 + round(k * spc) / trace.sample_rate
    return None
